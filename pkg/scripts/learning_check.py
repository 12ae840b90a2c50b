"""Desk-scale learning check: DQN and TD3 on the straight map, seeds 0-2.

Prints, per run, the greedy return of the untrained policy, of the final
iteration, and the bar halfway to the scripted driver.

    python scripts/learning_check.py --out runs/learning --algos DQN TD3 --seeds 0 1 2
"""
import argparse
import time
from pathlib import Path

from advdrive.config import Config
from advdrive.harness import PolicyRegistry, run_scenario1_training, scripted_reference

LEARNING_CHECK = ["scenario.map=straight", "train.n_drl=1", "scenario.scripted=0"]
# per-algorithm hyperparameters on top of the shared desk preset (same as the acceptance test)
ALGO_CHECK = {
    "DQN": ["train.iterations=30", "algo.train_every=2", "train.lr=0.00025", "algo.target_sync=2000",
            "algo.gamma=0.95", "algo.huber_delta=10"],
    "TD3": ["train.iterations=20", "algo.train_every=4", "algo.learning_starts=5000", "train.lr=0.001",
            "noise.sigma_explore=0.2", "algo.gamma=0.95"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/learning"))
    ap.add_argument("--algos", nargs="+", default=["DQN", "TD3"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    reference = scripted_reference(Config.load(overrides=LEARNING_CHECK + args.overrides, desk_scale=True))
    print(f"scripted reference {reference:.2f}")
    print("algo,seed,untrained,final,bar,passed,seconds")
    for algo in args.algos:
        for seed in args.seeds:
            overrides = [*LEARNING_CHECK, *ALGO_CHECK.get(algo, ()), f"train.seed={seed}", *args.overrides]
            cfg = Config.load(overrides=overrides, desk_scale=True)
            out = args.out / f"{algo}_s{seed}"
            t0 = time.perf_counter()
            records = run_scenario1_training(cfg, PolicyRegistry(out / "policies"), out, algo).records
            untrained, final = records[0].eval_reward, records[-1].eval_reward
            bar = untrained + 0.5 * (reference - untrained)
            print(f"{algo},{seed},{untrained:.2f},{final:.2f},{bar:.2f},{final >= bar},{time.perf_counter() - t0:.0f}", flush=True)


if __name__ == "__main__":
    main()
