"""Command-line front end for the simulator pipeline.

Subcommands cover the full workflow: synth-data, train-vae, train-state,
train-heads, rollout, train-agent, eval, ntm.  Every stage reads its
section of a JSON run config (section names use underscores, e.g.
"train_vae"), takes --config / --out / --seed flags plus repeatable
--set key=value overrides mirroring the section's keys, and writes
metrics.json plus a manifest.json recording the effective config hash,
the seed, and content hashes of every input and output file.  Outputs
carry no timestamps, so a stage rerun with identical config and seed is
byte-identical.

Stages that need a train/validation split or normalization stats always
recompute them from (data, split_fraction, seed), so separately trained
artifacts line up without passing stats files around.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (DqnConfig, QNetwork, policy_histogram, train_agent,
                    write_reward_curve)
from .checkpoint import file_sha256
from .data import (Cohort, NormalizationStats, Outcome, PatientEpisode,
                   export_cohort, generate_synthetic_cohort, load_cohort,
                   prepare_cohorts, SyntheticDynamicsSpec)
from .dynamics import (DEFAULT_WINDOW, StateModel, StateModelConfig, VARIANTS,
                       train_state_model)
from .env import (PatientEnv, ReplayTrajectory, RewardSpec, SimConfig,
                  replay_physician)
from .evaluation import (closed_loop_trajectories, compare_policy_distributions,
                         normalized_trajectory_mean, teacher_forced_eval,
                         trajectory_matrices, write_histograms_csv,
                         write_ntm_csv, write_series_csv)
from .heads import BinaryHead, train_heads
from .nn import TrainSchedule
from .vae import load_encoder, train_ae, train_vae, VaeTrainConfig

STAGES = ("synth-data", "train-vae", "train-state", "train-heads", "rollout",
          "train-agent", "eval", "ntm")


class ConfigError(Exception):
    """Invalid or incomplete run configuration; reported as a usage error."""


# ---------------------------------------------------------------- plumbing

def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def _section(config: dict, name: str, overrides: list[str] | None) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be a JSON object")
    merged = dict(section)
    for pair in overrides or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            merged[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            merged[key.strip()] = raw
    return merged


def _require_file(value, what: str) -> Path:
    if not value:
        raise ConfigError(f"missing config key: {what}")
    p = Path(value)
    if not p.is_file():
        raise ConfigError(f"{what} does not exist: {p}")
    return p


def _canonical_sha256(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def _prepared(cfg: dict, seed: int):
    """Load the raw cohort and derive (train, val, stats) deterministically."""
    data_path = _require_file(cfg.get("data"), "data")
    cohort = load_cohort(data_path)
    fraction = float(cfg.get("split_fraction", 0.8))
    train, val, stats = prepare_cohorts(cohort, fraction=fraction, seed=seed)
    return data_path, train, val, stats


def _schedule(cfg: dict, seed: int, default_epochs: int) -> TrainSchedule:
    epochs = int(cfg.get("epochs", default_epochs))
    patience = cfg.get("patience")
    return TrainSchedule(max_epochs=epochs,
                         patience=int(patience) if patience else epochs,
                         batch_size=int(cfg.get("batch_size", 64)),
                         seed=seed)


@dataclass
class StageResult:
    metrics: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


# ------------------------------------------------------------------ stages

def _stage_synth_data(cfg: dict, out: Path, seed: int) -> StageResult:
    episodes = int(cfg.get("episodes", 200))
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    gen = dict(cfg.get("generator", {}))
    if not isinstance(gen, dict):
        raise ConfigError("generator must be a JSON object of keyword overrides")
    try:
        spec = SyntheticDynamicsSpec.default(seed=seed, **gen)
    except TypeError as exc:
        raise ConfigError(f"bad generator override: {exc}")
    cohort = generate_synthetic_cohort(spec, episodes)
    path = out / "cohort.csv"
    export_cohort(cohort, path)
    lengths = [e.length for e in cohort.episodes]
    deaths = sum(e.outcome == Outcome.DEATH for e in cohort.episodes)
    metrics = {"n_episodes": cohort.n_episodes,
               "n_steps": int(sum(lengths)),
               "mean_length": float(np.mean(lengths)),
               "death_rate": deaths / cohort.n_episodes}
    return StageResult(metrics, outputs={"cohort.csv": path})


def _stage_train_vae(cfg: dict, out: Path, seed: int) -> StageResult:
    kind = cfg.get("kind", "vae")
    if kind not in ("vae", "ae"):
        raise ConfigError(f"kind must be 'vae' or 'ae', got {kind!r}")
    data_path, train, val, stats = _prepared(cfg, seed)
    config = VaeTrainConfig(epochs=int(cfg.get("epochs", 20)),
                            batch_size=int(cfg.get("batch_size", 64)),
                            learning_rate=float(cfg.get("learning_rate", 1e-3)),
                            beta=float(cfg.get("beta", 0.0)),
                            seed=seed,
                            patience=cfg.get("patience"))
    trainer = train_vae if kind == "vae" else train_ae
    model, history = trainer(train.all_states(), val.all_states(), config)
    model_path = out / f"{kind}.json"
    model.save(model_path)
    stats_path = out / "stats.json"
    from .data import write_stats_json
    write_stats_json(stats, train.feature_names, stats_path)
    recon = model.reconstruct(val.all_states())
    mse = float(np.mean((recon - val.all_states()) ** 2))
    metrics = {"best_epoch": history.best_epoch,
               "n_epochs": history.n_epochs,
               "val_loss": history.best_val_loss,
               "heldout_recon_mse": mse}
    return StageResult(metrics, inputs={"data": data_path},
                       outputs={f"{kind}.json": model_path,
                                "stats.json": stats_path})


def _load_optional_encoder(cfg: dict, inputs: dict):
    enc_path = cfg.get("encoder")
    if enc_path is None:
        return None
    p = _require_file(enc_path, "encoder")
    inputs["encoder"] = p
    return load_encoder(p)


def _stage_train_state(cfg: dict, out: Path, seed: int) -> StageResult:
    variant = cfg.get("variant", "vae_mdn_rnn")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    data_path, train, _, _ = _prepared(cfg, seed)
    inputs = {"data": data_path}
    encoder = _load_optional_encoder(cfg, inputs)
    model_cfg = StateModelConfig(variant=variant,
                                 window=int(cfg.get("window", DEFAULT_WINDOW)),
                                 rnn_hidden=int(cfg.get("rnn_hidden", 64)),
                                 n_mixtures=int(cfg.get("n_mixtures", 5)))
    if model_cfg.uses_encoder and encoder is None:
        raise ConfigError(f"variant {variant!r} needs an encoder checkpoint")
    if not model_cfg.uses_encoder and encoder is not None:
        raise ConfigError(f"variant {variant!r} does not take an encoder")
    schedule = _schedule(cfg, seed, default_epochs=20)
    model, history = train_state_model(
        model_cfg, train, schedule, encoder=encoder,
        val_fraction=float(cfg.get("val_fraction", 0.1)),
        learning_rate=float(cfg.get("learning_rate", 1e-3)))
    path = out / f"state_{variant}.json"
    enc_sha = file_sha256(inputs["encoder"]) if "encoder" in inputs else None
    model.save(path, encoder_sha256=enc_sha)
    metrics = {"best_epoch": history.best_epoch,
               "n_epochs": history.n_epochs,
               "val_loss": history.best_val_loss}
    return StageResult(metrics, inputs, {f"state_{variant}.json": path})


def _stage_train_heads(cfg: dict, out: Path, seed: int) -> StageResult:
    data_path, train, _, _ = _prepared(cfg, seed)
    inputs = {"data": data_path}
    encoder = _load_optional_encoder(cfg, inputs)
    schedule = _schedule(cfg, seed, default_epochs=20)
    result = train_heads(train, schedule, encoder=encoder,
                         step_norm=float(cfg.get("step_norm", 50.0)),
                         val_fraction=float(cfg.get("val_fraction", 0.1)),
                         learning_rate=float(cfg.get("learning_rate", 1e-3)))
    suffix = cfg.get("suffix", "")
    term_path = out / f"termination{suffix}.json"
    outcome_path = out / f"outcome{suffix}.json"
    result.termination.save(term_path)
    result.outcome.save(outcome_path)
    metrics = {"termination_val_loss": result.termination_history.best_val_loss,
               "outcome_val_loss": result.outcome_history.best_val_loss,
               "terminal_fraction": result.report.terminal_fraction,
               "death_fraction": result.report.death_fraction}
    return StageResult(metrics, inputs,
                       {f"termination{suffix}.json": term_path,
                        f"outcome{suffix}.json": outcome_path})


def _sim_config(cfg: dict, seed: int) -> SimConfig:
    checkpoints = cfg.get("checkpoints")
    if not isinstance(checkpoints, dict) or not checkpoints:
        raise ConfigError("missing config key: checkpoints")
    for name, path in checkpoints.items():
        _require_file(path, f"checkpoints.{name}")
    try:
        return SimConfig(variant=cfg.get("variant", "vae_mdn_rnn"),
                         checkpoints=dict(checkpoints),
                         temperature=float(cfg.get("temperature", 1.0)),
                         reward=RewardSpec.from_json_dict(cfg.get("reward", {})),
                         max_steps=int(cfg.get("max_steps", 50)),
                         termination_mode=cfg.get("termination_mode",
                                                  "bernoulli"),
                         seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _build_env(sim: SimConfig, pool: np.ndarray,
               stats: NormalizationStats) -> PatientEnv:
    state_model = StateModel.load(sim.checkpoints["state"])
    termination = BinaryHead.load(sim.checkpoints["termination"])
    outcome = BinaryHead.load(sim.checkpoints["outcome"])
    encoder = None
    if "encoder" in sim.checkpoints:
        encoder = load_encoder(sim.checkpoints["encoder"])
    return PatientEnv(state_model, termination, outcome, pool,
                      reward_spec=sim.reward, encoder=encoder, stats=stats,
                      temperature=sim.temperature, max_steps=sim.max_steps,
                      termination_mode=sim.termination_mode, seed=sim.seed)


def _pool(cfg: dict, train: Cohort, val: Cohort) -> tuple[Cohort, np.ndarray]:
    split = cfg.get("pool_split", "val")
    if split == "train":
        source = train
    elif split == "val":
        source = val
    elif split == "all":
        source = Cohort(train.episodes + val.episodes, train.feature_names,
                        train.normalization)
    else:
        raise ConfigError(f"pool_split must be train/val/all, got {split!r}")
    return source, source.initial_states()


def _write_trajectories_csv(path: Path, feature_names, blocks) -> None:
    """blocks: iterable of (variant, episode_idx, initial_state, actions,
    replay) tuples; one row per state with the step-0 initial row first."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "episode", "step", "action", "reward",
                         "done", *feature_names])
        for variant, ep, initial, actions, replay in blocks:
            writer.writerow([variant, ep, 0, -1, repr(0.0), 0,
                             *(repr(float(v)) for v in initial)])
            for t in range(replay.n_steps):
                writer.writerow([variant, ep, t + 1, int(actions[t]),
                                 repr(float(replay.rewards[t])),
                                 int(replay.dones[t]),
                                 *(repr(float(v))
                                   for v in replay.observations[t])])


def _random_rollout(env: PatientEnv, rng: np.random.Generator,
                    ) -> tuple[np.ndarray, list[int], ReplayTrajectory]:
    initial = env.reset()
    observations, rewards, dones, infos, actions = [], [], [], [], []
    while True:
        action = int(rng.integers(env.action_count))
        result = env.step(action)
        actions.append(action)
        observations.append(result.observation)
        rewards.append(result.reward)
        dones.append(result.done)
        infos.append(result.info)
        if result.done:
            break
    replay = ReplayTrajectory(np.stack(observations),
                              np.array(rewards, dtype=np.float64),
                              np.array(dones, dtype=bool), tuple(infos))
    return initial, actions, replay


def _rollout_episode(initial, actions, replay) -> PatientEpisode | None:
    """Recast a finished rollout as an episode row block for CSV export.

    Row t is the state in which action t was chosen; the observation after
    the terminal decision is not a row, matching the recorded-data layout.
    Returns None when the model never ended the episode (no outcome exists).
    """
    if replay.n_steps == 0 or not replay.dones[-1]:
        return None
    n = replay.n_steps
    states = np.vstack([initial[None, :], replay.observations[:n - 1]])
    outcome = Outcome(int(replay.infos[-1]["outcome"]))
    return PatientEpisode("sim", states, np.array(actions[:n]), outcome)


def _stage_rollout(cfg: dict, out: Path, seed: int) -> StageResult:
    data_path, train, val, stats = _prepared(cfg, seed)
    sim = _sim_config(cfg, seed)
    inputs = {"data": data_path,
              **{k: Path(v) for k, v in sim.checkpoints.items()}}
    source, pool = _pool(cfg, train, val)
    env = _build_env(sim, pool, stats)
    policy = cfg.get("policy", "physician")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])

    blocks, episodes, returns, lengths = [], [], [], []
    if policy == "physician":
        n = int(cfg.get("episodes", source.n_episodes))
        picks = source.episodes[:n]
        if not picks:
            raise ConfigError("no episodes available to replay")
        for i, episode in enumerate(picks):
            replay = replay_physician(env, episode)
            blocks.append((sim.variant, i, episode.states[0],
                           episode.actions, replay))
            sim_ep = _rollout_episode(episode.states[0], list(episode.actions),
                                      replay)
            if sim_ep is not None:
                episodes.append(sim_ep)
            returns.append(float(replay.rewards.sum()))
            lengths.append(replay.n_steps)
    elif policy == "random":
        n = int(cfg.get("episodes", 100))
        for i in range(n):
            initial, actions, replay = _random_rollout(env, rng)
            blocks.append((sim.variant, i, initial, actions, replay))
            sim_ep = _rollout_episode(initial, actions, replay)
            if sim_ep is not None:
                episodes.append(sim_ep)
            returns.append(float(replay.rewards.sum()))
            lengths.append(replay.n_steps)
    else:
        raise ConfigError(f"policy must be physician or random, got {policy!r}")

    traj_path = out / "trajectories.csv"
    _write_trajectories_csv(traj_path, train.feature_names, blocks)
    outputs = {"trajectories.csv": traj_path}
    if episodes:
        relabeled = [PatientEpisode(f"sim-{i:05d}", e.states, e.actions,
                                    e.outcome) for i, e in enumerate(episodes)]
        sim_cohort = Cohort(tuple(relabeled), train.feature_names)
        sim_path = out / "sim_cohort.csv"
        export_cohort(sim_cohort, sim_path)
        outputs["sim_cohort.csv"] = sim_path
    deaths = sum(e.outcome == Outcome.DEATH for e in episodes)
    metrics = {"n_rollouts": len(blocks),
               "n_completed": len(episodes),
               "mean_return": float(np.mean(returns)),
               "mean_length": float(np.mean(lengths)),
               "death_rate": deaths / len(episodes) if episodes else 0.0}
    return StageResult(metrics, inputs, outputs)


def _stage_train_agent(cfg: dict, out: Path, seed: int) -> StageResult:
    data_path, train, val, stats = _prepared(cfg, seed)
    sim = _sim_config(cfg, seed)
    inputs = {"data": data_path,
              **{k: Path(v) for k, v in sim.checkpoints.items()}}
    cfg_pool = dict(cfg)
    cfg_pool.setdefault("pool_split", "train")
    _, pool = _pool(cfg_pool, train, val)
    env = _build_env(sim, pool, stats)
    dqn_keys = dict(cfg.get("dqn", {}))
    dqn_keys["seed"] = seed
    try:
        dqn = DqnConfig(**dqn_keys)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dqn config: {exc}")
    result = train_agent(env, dqn)
    qnet_path = out / "qnet.json"
    result.qnet.save(qnet_path)
    curve_path = out / "reward_curve.csv"
    write_reward_curve(result.episodes, curve_path)
    returns = result.returns
    tail = returns[-50:] if returns.size else np.zeros(1)
    metrics = {"n_episodes": len(result.episodes),
               "mean_return": float(returns.mean()) if returns.size else 0.0,
               "mean_return_last50": float(tail.mean()),
               "final_epsilon": dqn.epsilon_at(dqn.total_steps)}
    return StageResult(metrics, inputs, {"qnet.json": qnet_path,
                                         "reward_curve.csv": curve_path})


def _eval_variants(cfg: dict) -> list[dict]:
    variants = cfg.get("variants")
    if not isinstance(variants, list) or not variants:
        raise ConfigError("eval needs a non-empty 'variants' list")
    seen = set()
    for entry in variants:
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError("each variants entry needs at least a 'name'")
        if entry["name"] not in VARIANTS:
            raise ConfigError(f"unknown variant {entry['name']!r}")
        if entry["name"] in seen:
            raise ConfigError(f"duplicate variant {entry['name']!r}")
        seen.add(entry["name"])
    return variants


def _tf_series(report, episodes: int):
    """First-N-episode (targets, predictions) pairs for plot export."""
    order: list[str] = []
    for subj in report.subjects:
        if subj not in order:
            order.append(subj)
    keep = set(order[:episodes])
    real_rows, sim_rows = [], []
    subjects = np.array(report.subjects)
    for subj in order[:episodes]:
        rows = subjects == subj
        real_rows.append(report.targets[rows])
        sim_rows.append(report.predictions[rows])
    return real_rows, sim_rows, keep


def _stage_eval(cfg: dict, out: Path, seed: int) -> StageResult:
    data_path, train, val, stats = _prepared(cfg, seed)
    inputs = {"data": data_path}
    variants = _eval_variants(cfg)
    n_eval = int(cfg.get("eval_episodes", val.n_episodes))
    eval_cohort = Cohort(val.episodes[:n_eval], val.feature_names,
                         val.normalization)
    if eval_cohort.n_episodes == 0:
        raise ConfigError("eval_episodes leaves no validation episodes")
    plot_episodes = int(cfg.get("plot_episodes", 3))
    ntm_mode = cfg.get("ntm_mode", "sumsq")
    seeds = iter(np.random.SeedSequence(seed).spawn(len(variants) * 2 + 1))

    metrics: dict = {}
    outputs: dict = {}
    ntm_rows: list[tuple] = []
    blocks = []
    for entry in variants:
        name = entry["name"]
        checkpoints = {k: v for k, v in entry.items() if k != "name"}
        sim = _sim_config({"checkpoints": checkpoints, "variant": name,
                           "temperature": cfg.get("temperature", 1.0),
                           "reward": cfg.get("reward", {}),
                           "max_steps": cfg.get("max_steps", 50),
                           "termination_mode": cfg.get("termination_mode",
                                                       "bernoulli")},
                          seed)
        inputs.update({f"{name}.{k}": Path(v) for k, v in checkpoints.items()})
        env = _build_env(sim, eval_cohort.initial_states(), stats)

        # teacher-forced sweep: true history in, one-step prediction out
        sample_rng = np.random.default_rng(next(seeds))
        report = teacher_forced_eval(env.state_model, eval_cohort,
                                     encoder=env.encoder,
                                     sample_rng=sample_rng)
        metrics[f"tf_mse_{name}"] = report.mse
        if report.sample_mse is not None:
            metrics[f"tf_sample_mse_{name}"] = report.sample_mse
        tf_path = out / f"teacher_forced_{name}.csv"
        real_rows, sim_rows, _ = _tf_series(report, plot_episodes)
        names = (train.feature_names if env.encoder is None
                 else tuple(f"z_{i}" for i in range(report.targets.shape[1])))
        write_series_csv(tf_path, name, names, real_rows, sim_rows)
        outputs[f"teacher_forced_{name}.csv"] = tf_path

        # closed-loop replay: model consumes only its own states
        sim_trajs = closed_loop_trajectories(env, eval_cohort)
        real_trajs = [e.states for e in eval_cohort.episodes]
        real_m, sim_m = trajectory_matrices(real_trajs, sim_trajs)
        ntm = normalized_trajectory_mean(real_m, sim_m, mode=ntm_mode)
        metrics[f"ntm_gap_{name}"] = ntm.mean_gap
        for i, fname in enumerate(train.feature_names):
            ntm_rows.append((name, fname, ntm.real_ntm[i], ntm.sim_ntm[i],
                             ntm.gaps[i], int(ntm.degenerate[i])))
        cl_path = out / f"closed_loop_{name}.csv"
        write_series_csv(cl_path, name, train.feature_names,
                         real_trajs[:plot_episodes], sim_trajs[:plot_episodes])
        outputs[f"closed_loop_{name}.csv"] = cl_path

        env_replay = _build_env(sim, eval_cohort.initial_states(), stats)
        for i, episode in enumerate(eval_cohort.episodes):
            replay = replay_physician(env_replay, episode)
            blocks.append((name, i, episode.states[0], episode.actions,
                           replay))

    traj_path = out / "trajectories.csv"
    _write_trajectories_csv(traj_path, train.feature_names, blocks)
    outputs["trajectories.csv"] = traj_path

    ntm_path = out / "ntm.csv"
    with ntm_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "feature", "real_ntm", "sim_ntm",
                         "abs_gap", "degenerate"])
        for variant, fname, real, simv, gap, degen in ntm_rows:
            writer.writerow([variant, fname, repr(float(real)),
                             repr(float(simv)), repr(float(gap)), degen])
    outputs["ntm.csv"] = ntm_path

    qnet_path = cfg.get("qnet")
    if qnet_path is not None:
        qp = _require_file(qnet_path, "qnet")
        inputs["qnet"] = qp
        net = QNetwork.load(qp)
        agent_variant = cfg.get("agent_variant", variants[0]["name"])
        match = [v for v in variants if v["name"] == agent_variant]
        if not match:
            raise ConfigError(f"agent_variant {agent_variant!r} not in variants")
        checkpoints = {k: v for k, v in match[0].items() if k != "name"}
        sim = _sim_config({"checkpoints": checkpoints,
                           "variant": agent_variant,
                           "temperature": cfg.get("temperature", 1.0),
                           "reward": cfg.get("reward", {}),
                           "max_steps": cfg.get("max_steps", 50),
                           "termination_mode": cfg.get("termination_mode",
                                                       "bernoulli")},
                          seed)
        env = _build_env(sim, eval_cohort.initial_states(), stats)
        rollouts = policy_histogram(net, env,
                                    int(cfg.get("policy_episodes", 100)))
        comparison = compare_policy_distributions(eval_cohort, rollouts,
                                                  reward_spec=sim.reward,
                                                  stats=stats)
        hist_path = out / "histograms.csv"
        write_histograms_csv(comparison, hist_path)
        outputs["histograms.csv"] = hist_path
        metrics["policy_mean_return"] = float(rollouts.returns.mean())
        metrics["policy_mean_length"] = float(rollouts.lengths.mean())
        metrics["policy_collapse"] = int(comparison.collapse_sim)
    return StageResult(metrics, inputs, outputs)


def _stage_ntm(cfg: dict, out: Path, seed: int) -> StageResult:
    real_path = _require_file(cfg.get("real"), "real")
    sim_path = _require_file(cfg.get("sim"), "sim")
    real = load_cohort(real_path)
    sim = load_cohort(sim_path)
    if real.feature_names != sim.feature_names:
        raise ConfigError("real and sim cohorts disagree on features")
    real_m, sim_m = trajectory_matrices([e.states for e in real.episodes],
                                        [e.states for e in sim.episodes])
    report = normalized_trajectory_mean(real_m, sim_m,
                                        mode=cfg.get("ntm_mode", "sumsq"))
    path = out / "ntm.csv"
    write_ntm_csv(report, real.feature_names, path)
    metrics = {"mean_gap": report.mean_gap,
               "n_degenerate": int(report.degenerate.sum()),
               "horizon": real_m.horizon}
    return StageResult(metrics, {"real": real_path, "sim": sim_path},
                       {"ntm.csv": path})


_STAGE_FUNCS = {"synth-data": _stage_synth_data,
                "train-vae": _stage_train_vae,
                "train-state": _stage_train_state,
                "train-heads": _stage_train_heads,
                "rollout": _stage_rollout,
                "train-agent": _stage_train_agent,
                "eval": _stage_eval,
                "ntm": _stage_ntm}


# -------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepsim",
        description="Patient-trajectory world model: train, simulate, evaluate.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       dest="overrides",
                       help="override a stage config key (JSON value)")
    return parser


def run_stage(stage: str, config: dict, out: Path, seed: int,
              overrides: list[str] | None = None) -> dict:
    """Run one stage; returns its metrics. Raises ConfigError on bad input."""
    cfg = _section(config, stage.replace("-", "_"), overrides)
    out.mkdir(parents=True, exist_ok=True)
    result = _STAGE_FUNCS[stage](cfg, out, seed)
    bad = [k for k, v in result.metrics.items()
           if not isinstance(v, (int, float))]
    if bad:
        raise RuntimeError(f"non-numeric metrics: {bad}")
    metrics_path = out / "metrics.json"
    _write_json(metrics_path, result.metrics)
    manifest = {"command": stage,
                "seed": seed,
                "config_sha256": _canonical_sha256(cfg),
                "inputs": {k: file_sha256(p)
                           for k, p in sorted(result.inputs.items())},
                "outputs": {k: file_sha256(p)
                            for k, p in sorted(result.outputs.items())},
                "metrics": result.metrics}
    manifest["outputs"]["metrics.json"] = file_sha256(metrics_path)
    _write_json(out / "manifest.json", manifest)
    return result.metrics


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _read_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        metrics = run_stage(args.stage, config, Path(args.out), seed,
                            args.overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for key in sorted(metrics):
        print(f"{key}: {metrics[key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
