"""Desk-scale adversarial check: a PPO adversary against the scripted-follower
victim on env_1, compared with the untrained adversary on 50 paired seeds. The
adversary starts 20 m behind the victim in the same lane (slot 4); from the
crossing slot 3 the scripted victim yields and desk-scale runs show no failures.

    python scripts/adversarial_check.py --out runs/adversarial
"""
import argparse
import time
from pathlib import Path

import numpy as np

from advdrive.config import Config
from advdrive.harness import PolicyRegistry, run_scenario3_adv_training, run_testing
from advdrive.metrics import compute_episode_metrics, paired_bootstrap_ci, parse_episode_log

ADVERSARIAL_CHECK = [
    "scenario.map=env_1",
    "adversary.victim=scripted-follower",
    "adversary.algo=PPO",
    "adversary.slot=4",
    "scenario.scripted=0",
    "scenario.episodes=50",
]


def victim_failures(logs) -> dict:
    out = {}
    for path in logs:
        (m,) = [m for m in compute_episode_metrics(parse_episode_log(path)) if m.agent_id == "V"]
        out[m.seed] = (m.cc, m.co, m.os)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/adversarial"))
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    cfg = Config.load(overrides=ADVERSARIAL_CHECK + args.overrides, desk_scale=True)
    t0 = time.perf_counter()
    results = {}
    for label, c in (("untrained", cfg.with_values(**{"train.adv_iterations": 0})), ("trained", cfg)):
        out = args.out / label
        reg = PolicyRegistry(out / "policies")
        res = run_scenario3_adv_training(c, reg, out)
        for r in res.records:
            print(label, r.line(), flush=True)
        results[label] = victim_failures(run_testing(cfg, reg, out, kind=3).logs)
    seeds = sorted(results["untrained"])
    for label, rows in results.items():
        cc, co, os_ = np.mean([rows[s] for s in seeds], axis=0)
        print(f"{label}: victim CC {cc:.4f} CO {co:.4f} OS {os_:.4f} sum {cc + co + os_:.4f}")
    mean, lo, hi = paired_bootstrap_ci([sum(results["untrained"][s]) for s in seeds], [sum(results["trained"][s]) for s in seeds])
    print(f"paired difference {mean:.4f}, 95% CI [{lo:.4f}, {hi:.4f}], excludes 0: {lo > 0 or hi < 0}")
    print(f"seconds {time.perf_counter() - t0:.0f}")


if __name__ == "__main__":
    main()
