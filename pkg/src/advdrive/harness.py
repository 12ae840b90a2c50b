"""Training and evaluation workflows: multi-agent AC training, frozen-policy testing,
and adversarial training against a frozen victim."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    ALGO_TAGS,
    BrakePolicy,
    FrozenPolicy,
    NetConfig,
    ScriptedFollowerPolicy,
    action_kind,
    check_algo,
    greedy_action,
    make_learner,
    network_specs,
    to_command,
)
from .config import Config
from .continuous import NoiseConfig
from .discrete import AlgoConfig
from .env import EpisodeConfig, EpisodeLogWriter, RewardConstants, RosterEntry, env_reset, env_step, episode_over
from .errors import CheckpointError, ConfigurationError, NumericError, ProtocolError
from .maps import MAP_IDS, build_map
from .nets import NetworkSpec, ParameterSet, checkpoint_bytes, load_checkpoint, save_checkpoint

MAP_TEST_STEPS = {"env_1": 2000, "env_2": 5000, "straight": 300}
BUILTIN_POLICIES = {"brake": BrakePolicy, "scripted-follower": ScriptedFollowerPolicy}
AC_PREFIX, ADV_PREFIX = "AC-", "ADV-"
TERMINAL_REASONS = ("crash", "goal")
MAX_NUMERIC_FAILURES = 3


# ---------------------------------------------------------------- registry

@dataclass(frozen=True)
class RegistryEntry:
    name: str
    algo: str
    kind: str
    path: Path


class PolicyRegistry:
    """The 14 named policies (AC-<ALGO>, ADV-<ALGO>) and their checkpoint files."""

    def __init__(self, root):
        self.root = Path(root)

    @staticmethod
    def names() -> tuple:
        return tuple(p + a for p in (AC_PREFIX, ADV_PREFIX) for a in ALGO_TAGS)

    def entry(self, name: str) -> RegistryEntry:
        for prefix in (AC_PREFIX, ADV_PREFIX):
            if name.startswith(prefix) and name[len(prefix):] in ALGO_TAGS:
                algo = name[len(prefix):]
                return RegistryEntry(name, algo, action_kind(algo), self.root / f"{name}.ckpt")
        raise ConfigurationError(f"unknown policy name {name!r}; expected one of {self.names()} or {tuple(BUILTIN_POLICIES)}")

    def save(self, name: str, params: ParameterSet) -> Path:
        e = self.entry(name)
        return save_checkpoint(e.path, params, e.algo)

    def load(self, name: str, expected_spec: NetworkSpec | None = None) -> ParameterSet:
        e = self.entry(name)
        if not e.path.exists():
            raise CheckpointError(f"no checkpoint for {name} at {e.path}")
        params, meta = load_checkpoint(e.path, expected_spec)
        if meta["algo_tag"] != e.algo:
            raise CheckpointError(f"{e.path} holds a {meta['algo_tag']} policy, registry expects {e.algo}")
        heads = params.spec.heads
        if (e.kind == "continuous") != ("mean" in heads):
            raise CheckpointError(f"{e.path} network heads {heads} do not fit a {e.kind} policy")
        return params

    def policy(self, name: str, expected_spec: NetworkSpec | None = None):
        if name in BUILTIN_POLICIES:
            return BUILTIN_POLICIES[name]()
        return FrozenPolicy(self.load(name, expected_spec), name)

    def file_digest(self, name: str) -> str:
        return hashlib.sha256(self.entry(name).path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    adv_iterations: int = 100
    rollout_steps: int = 2048
    total_steps: int = 40_000_000
    adv_total_steps: int = 20_000_000
    lr: float = 0.0005
    batch_size: int = 128
    optimizer: str = "adam"
    n_drl: int = 2
    n_scripted: int = 2
    n_workers: int = 1
    max_steps: int = 2000
    eval_episodes: int = 0
    eval_every: int = 1
    slots: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        for name in ("rollout_steps", "n_drl", "n_workers", "max_steps", "batch_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"train.{name} must be positive")
        if self.iterations < 0 or self.adv_iterations < 0 or self.n_scripted < 0:
            raise ConfigurationError("iteration and scripted counts must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: int
    map_id: str
    roster: tuple
    n_scripted: int = 2
    victim: str | None = None
    frozen: tuple = ()
    episodes: int = 50
    steps: int = 2000
    seeds: tuple = ()
    slot: int = 0
    adversary: str | None = None
    victim_slot: int = 0
    adversary_slot: int = 3

    def __post_init__(self):
        if self.kind not in (1, 2, 3):
            raise ConfigurationError(f"scenario.kind must be 1, 2 or 3, got {self.kind}")
        if self.map_id not in MAP_IDS:
            raise ConfigurationError(f"unknown scenario.map {self.map_id!r}")
        if self.episodes <= 0 or self.steps <= 0:
            raise ConfigurationError("episodes and steps must be positive")
        if len(self.seeds) != self.episodes:
            raise ConfigurationError(f"{len(self.seeds)} seeds for {self.episodes} episodes")
        if self.kind == 2 and self.n_scripted != 0:
            raise ConfigurationError("scenario 2 drives a single agent with no other vehicles")
        if self.kind == 3:
            if self.victim is None or self.victim not in self.frozen:
                raise ConfigurationError("scenario 3 requires a frozen victim")
            if self.adversary is None:
                raise ConfigurationError("scenario 3 requires an adversary policy")
        if not self.roster:
            raise ConfigurationError("scenario roster is empty")


def train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(
        iterations=cfg["train.iterations"],
        adv_iterations=cfg["train.adv_iterations"],
        rollout_steps=cfg["train.rollout_steps"],
        total_steps=cfg["train.total_steps"],
        adv_total_steps=cfg["train.adv_total_steps"],
        lr=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        optimizer=cfg["train.optimizer"],
        n_drl=cfg["train.n_drl"],
        n_scripted=cfg["scenario.scripted"],
        n_workers=cfg["train.n_workers"],
        max_steps=cfg["train.max_steps"],
        eval_episodes=cfg["train.eval_episodes"],
        eval_every=cfg["train.eval_every"],
        slots=cfg["train.slots"],
        seed=cfg["train.seed"],
    )


def algo_config(cfg: Config) -> AlgoConfig:
    a = lambda k: cfg["algo." + k]
    return AlgoConfig(
        gamma=a("gamma"),
        gae_lambda=a("gae_lambda"),
        clip_eps=a("clip_eps"),
        kl_coef=a("kl_coef"),
        value_coef=a("value_coef"),
        entropy_coef=a("entropy_coef"),
        lr=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        rollout_steps=cfg["train.rollout_steps"],
        ppo_epochs=a("ppo_epochs"),
        grad_clip=a("grad_clip"),
        n_workers=cfg["train.n_workers"],
        segment_steps=a("segment_steps"),
        eps_start=a("eps_start"),
        eps_end=a("eps_end"),
        eps_decay_steps=a("eps_decay_steps"),
        target_sync=a("target_sync"),
        buffer_capacity=a("buffer_capacity"),
        learning_starts=a("learning_starts"),
        train_every=a("train_every"),
        huber_delta=a("huber_delta"),
        rho_bar=a("rho_bar"),
        c_bar=a("c_bar"),
    )


def noise_config(cfg: Config) -> NoiseConfig:
    n = lambda k: cfg["noise." + k]
    return NoiseConfig(n("sigma_explore"), n("sigma_target"), n("noise_clip"), n("policy_delay"), n("tau"))


def net_config(cfg: Config) -> NetConfig:
    return NetConfig(
        obs_pool=cfg["net.obs_pool"],
        frame_stack=cfg["net.frame_stack"],
        convs=cfg["net.convs"],
        hidden=cfg["net.hidden"],
        activation=cfg["net.activation"],
    )


def reward_constants(cfg: Config) -> RewardConstants:
    r = lambda k: cfg["reward." + k]
    return RewardConstants(r("beta"), r("collision_penalty"), r("offroad_penalty"), r("adv_collision_bonus"), r("adv_offroad_bonus"))


def test_steps(cfg: Config) -> int:
    return cfg["scenario.steps"] or MAP_TEST_STEPS[cfg["scenario.map"]]


def test_seeds(cfg: Config) -> tuple:
    return tuple(cfg["seeds.list"]) or tuple(range(cfg["scenario.episodes"]))


def scenario_spec(cfg: Config, kind: int | None = None) -> ScenarioSpec:
    kind = cfg["scenario.kind"] if kind is None else kind
    seeds = test_seeds(cfg)
    if kind == 3:
        victim = cfg["adversary.victim"]
        adversary = ADV_PREFIX + cfg["adversary.algo"]
        roster, frozen = (victim, adversary), (victim, adversary)
    else:
        victim, adversary = None, None
        roster = cfg["scenario.policies"]
        frozen = roster
    return ScenarioSpec(
        kind=kind,
        map_id=cfg["scenario.map"],
        roster=tuple(roster),
        n_scripted=0 if kind == 2 else cfg["scenario.scripted"],
        victim=victim,
        frozen=tuple(frozen),
        episodes=len(seeds),
        steps=test_steps(cfg),
        seeds=seeds,
        slot=cfg["scenario.slot"],
        adversary=adversary,
        victim_slot=cfg["adversary.victim_slot"],
        adversary_slot=cfg["adversary.slot"],
    )


# ---------------------------------------------------------------- training session

def episode_seed(session_seed: int, world: int, episode: int) -> int:
    return int(np.random.SeedSequence([session_seed, world, episode]).generate_state(1)[0])


@dataclass
class IterationRecord:
    iteration: int
    env_steps: int
    updates: int
    episodes: int
    mean_episode_reward: float
    eval_reward: float
    loss_terms: dict = field(default_factory=dict)

    HEADER = "iteration,env_steps,updates,episodes,mean_episode_reward,eval_reward,loss_terms"

    def line(self) -> str:
        terms = ";".join(f"{k}={_g(v)}" for k, v in sorted(self.loss_terms.items()))
        return (
            f"{self.iteration},{self.env_steps},{self.updates},{self.episodes},"
            f"{_g(self.mean_episode_reward)},{_g(self.eval_reward)},{terms}"
        )


def _g(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6g}"


def write_records(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(IterationRecord.HEADER + "\n" + "".join(r.line() + "\n" for r in records))
    return path


def read_records(path) -> list:
    rows = []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        it, steps, updates, eps, mean_r, eval_r, terms = line.split(",", 6)
        loss_terms = dict(kv.split("=") for kv in terms.split(";") if kv)
        rows.append(
            IterationRecord(int(it), int(steps), int(updates), int(eps), float(mean_r), float(eval_r),
                            {k: float(v) for k, v in loss_terms.items()})
        )
    return rows


class TrainingSession:
    """``n_workers`` lock-stepped worlds sharing one roster. Learner-controlled agents
    get worker index = world index; fixed agents act through frozen policies."""

    def __init__(
        self,
        map_id: str,
        roster: tuple,
        learners: dict,
        fixed: dict,
        n_workers: int,
        seed: int,
        max_steps: int,
        rewards: RewardConstants,
        spawn_jitter: tuple,
    ):
        self.map_id = map_id
        self.roster = roster
        self.learners = learners
        self.fixed = fixed
        self.n_workers = n_workers
        self.seed = seed
        self.max_steps = max_steps
        self.rewards = rewards
        self.spawn_jitter = spawn_jitter
        self.episode_counter = [0] * n_workers
        self.worlds = [None] * n_workers
        self.obs = [None] * n_workers
        self.states = [None] * n_workers
        self.returns = [None] * n_workers
        self.completed = []
        self.env_steps = 0
        for w in range(n_workers):
            self._reset(w)

    def _episode_config(self, seed: int) -> EpisodeConfig:
        return EpisodeConfig(self.map_id, self.roster, self.max_steps, seed, rewards=self.rewards, spawn_jitter=self.spawn_jitter)

    def _reset(self, w: int) -> None:
        seed = episode_seed(self.seed, w, self.episode_counter[w])
        self.episode_counter[w] += 1
        self.worlds[w], self.obs[w] = env_reset(self._episode_config(seed))
        self.states[w] = {a: l.initial_state(self.obs[w][a]) for a, l in self.learners.items()}
        self.returns[w] = {a: 0.0 for a in self.learners}

    def _learners_done(self, world) -> bool:
        return episode_over(world) or not any(a in world.vehicles for a in self.learners)

    def tick(self) -> list:
        stats = []
        for w in range(self.n_workers):
            world, obs, states = self.worlds[w], self.obs[w], self.states[w]
            actions, pending = {}, {}
            for agent_id in world.vehicles:
                if agent_id in self.learners:
                    learner = self.learners[agent_id]
                    o = states[agent_id]
                    a, aux = learner.act(w, o)
                    pending[agent_id] = (o, a, aux)
                    actions[agent_id] = to_command(a)
                elif agent_id in self.fixed:
                    actions[agent_id] = self.fixed[agent_id].act(obs[agent_id], world, agent_id)
            world, results = env_step(world, actions)
            new_obs = {}
            for agent_id, res in results.items():
                if res.observation is not None and not res.done:
                    new_obs[agent_id] = res.observation
                if agent_id not in pending:
                    continue
                learner = self.learners[agent_id]
                o, a, aux = pending[agent_id]
                terminal = res.info["reason"] in TERMINAL_REASONS
                nxt = learner.next_state(o, res.observation)
                states[agent_id] = nxt
                stats += learner.observe(w, o, a, aux, res.reward, nxt, terminal, res.done)
                self.returns[w][agent_id] += res.reward
                self.env_steps += 1
            self.worlds[w], self.obs[w] = world, new_obs
            if self._learners_done(world):
                self.completed += list(self.returns[w].values())
                self._reset(w)
        for learner in _unique(self.learners.values()):
            stats += learner.tick()
        return stats

    def pop_completed(self) -> list:
        out, self.completed = self.completed, []
        return out


def _unique(xs):
    seen, out = set(), []
    for x in xs:
        if id(x) not in seen:
            seen.add(id(x))
            out.append(x)
    return out


def evaluate_greedy(map_id, roster, learners: dict, fixed: dict, seeds, max_steps, rewards, spawn_jitter) -> float:
    """Mean episodic return of learner-controlled agents under noise-free actions."""
    totals = []
    for seed in seeds:
        world, obs = env_reset(EpisodeConfig(map_id, roster, max_steps, seed, rewards=rewards, spawn_jitter=spawn_jitter))
        ret = {a: 0.0 for a in learners}
        states = {a: l.initial_state(obs[a]) for a, l in learners.items()}
        while not (episode_over(world) or not any(a in world.vehicles for a in learners)):
            actions = {}
            for agent_id in world.vehicles:
                if agent_id in learners:
                    learner = learners[agent_id]
                    actions[agent_id] = to_command(greedy_action(learner.policy_params(), states[agent_id]))
                elif agent_id in fixed:
                    actions[agent_id] = fixed[agent_id].act(obs[agent_id], world, agent_id)
            world, results = env_step(world, actions)
            obs = {a: r.observation for a, r in results.items() if r.observation is not None and not r.done}
            for agent_id, res in results.items():
                if agent_id in ret:
                    ret[agent_id] += res.reward
                    if not res.done:
                        states[agent_id] = learners[agent_id].next_state(states[agent_id], res.observation)
        totals += list(ret.values())
    return float(np.mean(totals))


EVAL_SEED_BASE = 1_000_000


def evaluate_fixed(map_id, roster, agent_id: str, policy, seeds, max_steps, rewards, spawn_jitter) -> float:
    """Mean episodic return of ``agent_id`` driven by a fixed policy; the reference
    score a learner in the same roster slot is compared against."""
    totals = []
    for seed in seeds:
        world, obs = env_reset(EpisodeConfig(map_id, roster, max_steps, seed, rewards=rewards, spawn_jitter=spawn_jitter))
        ret = 0.0
        while not episode_over(world) and agent_id in world.vehicles:
            world, results = env_step(world, {agent_id: policy.act(obs.get(agent_id), world, agent_id)})
            obs = {a: r.observation for a, r in results.items() if r.observation is not None and not r.done}
            ret += results[agent_id].reward
        totals.append(ret)
    return float(np.mean(totals))


def scripted_reference(cfg: Config) -> float:
    """Return of the scripted driver in learner slot L0 of the scenario-1 training
    roster, over the same greedy-evaluation seeds and step limit."""
    tc = train_config(cfg)
    map_id = cfg["scenario.map"]
    seeds = [EVAL_SEED_BASE + i for i in range(max(tc.eval_episodes, 1))]
    return evaluate_fixed(map_id, _training_roster(tc, map_id), "L0", ScriptedFollowerPolicy(), seeds, tc.max_steps,
                          reward_constants(cfg), cfg["sim.spawn_jitter"])


@dataclass
class TrainResult:
    checkpoint: Path
    records: list
    record_path: Path
    extra: dict = field(default_factory=dict)


def _run_training(session: TrainingSession, tc_iterations: int, budget: int, rollout_steps: int, evaluate, on_iteration,
                  eval_every: int = 1) -> list:
    records = []
    if evaluate is not None:
        records.append(IterationRecord(0, 0, 0, 0, float("nan"), evaluate()))
    failures = 0
    for it in range(1, tc_iterations + 1):
        if session.env_steps >= budget:
            break
        stats = []
        try:
            for _ in range(rollout_steps):
                stats += session.tick()
                if session.env_steps >= budget:
                    break
            failures = 0
        except NumericError as exc:
            failures += 1
            if failures >= MAX_NUMERIC_FAILURES:
                raise NumericError(f"non-finite loss in {failures} consecutive iterations (last at {it}): {exc}") from exc
            for w in range(session.n_workers):
                session._reset(w)
        returns = session.pop_completed()
        terms = {}
        for s in stats:
            for k, v in s.items():
                terms.setdefault(k, []).append(v)
        records.append(
            IterationRecord(
                iteration=it,
                env_steps=session.env_steps,
                updates=sum(l.updates for l in _unique(session.learners.values())),
                episodes=len(returns),
                mean_episode_reward=float(np.mean(returns)) if returns else float("nan"),
                eval_reward=evaluate() if evaluate is not None and (
                    it % eval_every == 0 or it == tc_iterations or session.env_steps >= budget) else float("nan"),
                loss_terms={k: float(np.mean(v)) for k, v in terms.items()},
            )
        )
        on_iteration(it)
    return records


def _training_roster(tc: TrainConfig, map_id: str) -> tuple:
    n_slots = len(build_map(map_id).spawns)
    slots = tuple(tc.slots) or tuple(range(tc.n_drl))
    if len(slots) != tc.n_drl:
        raise ConfigurationError(f"train.slots lists {len(slots)} slots for {tc.n_drl} learners")
    free = [s for s in range(n_slots) if s not in slots]
    if tc.n_scripted > len(free):
        raise ConfigurationError(f"{tc.n_drl} learners and {tc.n_scripted} scripted cars exceed the slots of {map_id}")
    roster = [RosterEntry(f"L{i}", "AC", slot=s) for i, s in enumerate(slots)]
    roster += [RosterEntry(f"S{i}", "scripted", slot=s) for i, s in enumerate(free[: tc.n_scripted])]
    return tuple(roster)


def run_scenario1_training(cfg: Config, registry: PolicyRegistry, out_dir, algo_tag: str | None = None) -> TrainResult:
    """Train ``n_drl`` independent learners of one algorithm next to scripted cars;
    learner 0 becomes the registry checkpoint AC-<ALGO>."""
    algo = algo_tag or cfg["algo.tag"]
    check_algo(algo)
    tc = train_config(cfg)
    map_id = cfg["scenario.map"]
    roster = _training_roster(tc, map_id)
    ac, noise, net = algo_config(cfg), noise_config(cfg), net_config(cfg)
    learners = {f"L{i}": make_learner(algo, net, ac, noise, seed=tc.seed * 1000 + 17 * i, n_workers=tc.n_workers) for i in range(tc.n_drl)}
    rewards, jitter = reward_constants(cfg), cfg["sim.spawn_jitter"]
    session = TrainingSession(map_id, roster, learners, {}, tc.n_workers, tc.seed, tc.max_steps, rewards, jitter)
    name = AC_PREFIX + algo
    lead = learners["L0"]
    evaluate = None
    if tc.eval_episodes > 0:
        seeds = [EVAL_SEED_BASE + i for i in range(tc.eval_episodes)]
        evaluate = lambda: evaluate_greedy(map_id, roster, learners, {}, seeds, tc.max_steps, rewards, jitter)
    path = registry.save(name, lead.policy_params())
    records = _run_training(session, tc.iterations, tc.total_steps, tc.rollout_steps, evaluate,
                           lambda it: registry.save(name, lead.policy_params()), tc.eval_every)
    record_path = write_records(Path(out_dir) / f"train_{name}.csv", records)
    return TrainResult(path, records, record_path)


def run_scenario3_adv_training(cfg: Config, registry: PolicyRegistry, out_dir, adversary_algo: str | None = None) -> TrainResult:
    """Train one adversary against a frozen victim; the victim's parameters are checked
    bit-for-bit before and after training."""
    algo = adversary_algo or cfg["adversary.algo"]
    check_algo(algo)
    tc = train_config(cfg)
    map_id = cfg["scenario.map"]
    victim_name = cfg["adversary.victim"]
    net = net_config(cfg)
    victim = registry.policy(victim_name)
    before = _victim_fingerprint(registry, victim_name, victim)
    v_slot, a_slot = cfg["adversary.victim_slot"], cfg["adversary.slot"]
    n_slots = len(build_map(map_id).spawns)
    free = [s for s in range(n_slots) if s not in (v_slot, a_slot)]
    if tc.n_scripted > len(free):
        raise ConfigurationError(f"too many scripted cars for {map_id}")
    roster = (RosterEntry("V", "AC", slot=v_slot), RosterEntry("A", "adversary", slot=a_slot, victim="V"))
    roster += tuple(RosterEntry(f"S{i}", "scripted", slot=s) for i, s in enumerate(free[: tc.n_scripted]))
    learner = make_learner(algo, net, algo_config(cfg), noise_config(cfg), seed=tc.seed * 1000 + 7, n_workers=tc.n_workers)
    rewards, jitter = reward_constants(cfg), cfg["sim.spawn_jitter"]
    session = TrainingSession(map_id, roster, {"A": learner}, {"V": victim}, tc.n_workers, tc.seed, tc.max_steps, rewards, jitter)
    name = ADV_PREFIX + algo
    evaluate = None
    if tc.eval_episodes > 0:
        seeds = [EVAL_SEED_BASE + i for i in range(tc.eval_episodes)]
        evaluate = lambda: evaluate_greedy(map_id, roster, {"A": learner}, {"V": victim}, seeds, tc.max_steps, rewards, jitter)
    path = registry.save(name, learner.policy_params())

    def on_iteration(it):
        registry.save(name, learner.policy_params())
        _assert_frozen(before, _victim_fingerprint(registry, victim_name, victim), victim_name)

    records = _run_training(session, tc.adv_iterations, tc.adv_total_steps, tc.rollout_steps, evaluate, on_iteration, tc.eval_every)
    after = _victim_fingerprint(registry, victim_name, victim)
    _assert_frozen(before, after, victim_name)
    record_path = write_records(Path(out_dir) / f"train_{name}_vs_{victim_name}.csv", records)
    return TrainResult(path, records, record_path, {"victim_before": before, "victim_after": after})


def _victim_fingerprint(registry: PolicyRegistry, name: str, policy) -> tuple:
    if name in BUILTIN_POLICIES:
        return (name,)
    return (registry.file_digest(name), hashlib.sha256(checkpoint_bytes(policy.params, registry.entry(name).algo)).hexdigest())


def _assert_frozen(before, after, name) -> None:
    if before != after:
        raise ProtocolError(f"frozen victim {name} was modified during adversarial training")


# ---------------------------------------------------------------- testing

@dataclass
class TestResult:
    logs: list
    groups: dict


def _expected_spec(registry: PolicyRegistry, name: str, net: NetConfig):
    if name in BUILTIN_POLICIES:
        return None
    return next(iter(network_specs(registry.entry(name).algo, net).values()))


def _test_rosters(spec: ScenarioSpec) -> list:
    """(group label, roster, {agent id: policy name}) per independent episode set."""
    n_slots = len(build_map(spec.map_id).spawns)

    def with_scripted(entries, used):
        free = [s for s in range(n_slots) if s not in used]
        if spec.n_scripted > len(free):
            raise ConfigurationError(f"{len(used)} policies and {spec.n_scripted} scripted cars exceed the slots of {spec.map_id}")
        return tuple(entries) + tuple(RosterEntry(f"S{i}", "scripted", slot=s) for i, s in enumerate(free[: spec.n_scripted]))

    if spec.kind == 1:
        if len(spec.roster) > n_slots:
            raise ConfigurationError(f"{len(spec.roster)} policies exceed the slots of {spec.map_id}")
        entries = [RosterEntry(f"P{i}", "AC", policy=p, slot=i) for i, p in enumerate(spec.roster)]
        return [("multi", with_scripted(entries, set(range(len(entries)))), {e.agent_id: e.policy for e in entries})]
    if spec.kind == 2:
        return [(p, (RosterEntry("P0", "AC", policy=p, slot=spec.slot),), {"P0": p}) for p in spec.roster]
    entries = [
        RosterEntry("V", "AC", policy=spec.victim, slot=spec.victim_slot),
        RosterEntry("A", "adversary", policy=spec.adversary, slot=spec.adversary_slot, victim="V"),
    ]
    label = f"{spec.victim}_vs_{spec.adversary}"
    return [(label, with_scripted(entries, {spec.victim_slot, spec.adversary_slot}), {"V": spec.victim, "A": spec.adversary})]


def run_testing(cfg: Config, registry: PolicyRegistry, out_dir, kind: int | None = None) -> TestResult:
    """Run every configured episode with frozen, noise-free policies and write one
    per-step log per episode."""
    spec = scenario_spec(cfg, kind)
    net = net_config(cfg)
    rewards, jitter = reward_constants(cfg), cfg["sim.spawn_jitter"]
    logs, groups = [], {}
    for label, roster, names in _test_rosters(spec):
        policies = {a: registry.policy(n, _expected_spec(registry, n, net)) for a, n in names.items()}
        folder = Path(out_dir) / "logs" / f"s{spec.kind}_{spec.map_id}_{label}"
        folder.mkdir(parents=True, exist_ok=True)
        paths = []
        for seed in spec.seeds:
            path = folder / f"ep{seed:05d}.csv"
            meta = {"scenario": spec.kind, "map": spec.map_id, "seed": seed, "steps": spec.steps, "group": label}
            run_test_episode(EpisodeConfig(spec.map_id, roster, spec.steps, seed, rewards=rewards, spawn_jitter=jitter),
                             policies, names, path, meta)
            paths.append(path)
        groups[label] = paths
        logs += paths
    return TestResult(logs, groups)


def run_test_episode(config: EpisodeConfig, policies: dict, names: dict, path, meta: dict) -> int:
    """Exactly ``config.max_steps`` world ticks; finished agents simply stop logging."""
    world, obs = env_reset(config)
    labels = {e.agent_id: names.get(e.agent_id, "scripted") for e in config.roster}
    with EpisodeLogWriter(path, f"{meta['group']}:{meta['seed']}", meta, labels) as writer:
        while world.t < config.max_steps:
            actions = {a: policies[a].act(obs[a], world, a) for a in world.vehicles if a in policies}
            world, results = env_step(world, actions)
            writer.write_step(world.t, results)
            obs = {a: r.observation for a, r in results.items() if r.observation is not None and not r.done}
    return world.t
