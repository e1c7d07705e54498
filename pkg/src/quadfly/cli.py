"""Command-line entry point: ``quadfly train|eval|track|bench|ablate``.

Run configuration files are JSON objects with optional ``env``, ``td3`` and
``pid`` sections; missing keys take their defaults. The thread count of the
numerical libraries is taken from ``QUADFLY_THREADS`` (applied before numpy
is imported when run as a program).
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("QUADFLY_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from dataclasses import dataclass, field, replace  # noqa: E402
from datetime import datetime, timezone  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from quadfly import dynamics as dyn  # noqa: E402
from quadfly.checkpoint import CheckpointError, load_checkpoint, save_checkpoint  # noqa: E402
from quadfly.env import ABLATIONS, Ablation, EnvConfig  # noqa: E402
from quadfly.pid import PidController, PidGains  # noqa: E402
from quadfly.tasks import LissajousSpec, run_pid_tracking, run_tracking  # noqa: E402
from quadfly.td3 import Td3Config, TrainingDiverged, evaluate, train  # noqa: E402

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_MISMATCH = 5

STATS_COLUMNS = ("step", "return_mean", "return_ma10", "length_mean", "length_ma10")
TIMING_COLUMNS = ("step", "wallclock_s")
REFERENCE_GPU_STEPS_PER_S = 1.284e9


class UsageError(Exception):
    pass


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    pid: PidGains = field(default_factory=PidGains)

    def to_dict(self) -> dict:
        return {"env": self.env.to_dict(), "td3": self.td3.to_dict(), "pid": self.pid.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        unknown = set(d) - {"env", "td3", "pid"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(EnvConfig.from_dict(d.get("env", {})), Td3Config.from_dict(d.get("td3", {})),
                   PidGains.from_dict(d.get("pid", {})))

    @classmethod
    def load(cls, path) -> RunConfig:
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except (ValueError, TypeError, KeyError) as e:
            raise UsageError(f"invalid config {path}: {e}") from None

    def hash(self) -> str:
        blob = json.dumps({"env": self.env.to_dict(), "td3": self.td3.to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def source_revision() -> str:
    """Content hash of the package sources, a stand-in for a VCS revision."""
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return "src-" + h.hexdigest()[:12]


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"1,4,7"`` or a mix like ``"0-2,8"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    if len(set(seeds)) != len(seeds):
        raise UsageError(f"duplicate seeds in {text!r}")
    return seeds


def _fmt(x) -> str:
    return repr(int(x)) if isinstance(x, (int, np.integer)) else repr(float(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, (int, float, np.integer, np.floating)) else x for x in r])


# -- train ----------------------------------------------------------------------------


def run_train(cfg: RunConfig, seed: int, out, log=print):
    """Train and write stats, timing, checkpoints and a manifest into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    stats_fh = open(out / "stats.csv", "w", newline="")
    timing_fh = open(out / "timing.csv", "w", newline="")
    stats_w = csv.writer(stats_fh, lineterminator="\n")
    timing_w = csv.writer(timing_fh, lineterminator="\n")
    stats_w.writerow(STATS_COLUMNS)
    timing_w.writerow(TIMING_COLUMNS)

    def on_eval(rec):
        stats_w.writerow([_fmt(rec.step), _fmt(rec.return_mean), _fmt(rec.return_ma10),
                          _fmt(rec.length_mean), _fmt(rec.length_ma10)])
        timing_w.writerow([_fmt(rec.step), f"{rec.wallclock_s:.3f}"])
        stats_fh.flush()
        timing_fh.flush()
        if rec.step % (10 * cfg.td3.eval_interval) == 0:
            log(f"step {rec.step}: length {rec.length_mean:.1f} (ma10 {rec.length_ma10:.1f}), "
                f"return {rec.return_mean:.1f}, {rec.wallclock_s:.0f} s")

    try:
        result = train(cfg.env, cfg.td3, seed, on_eval)
    finally:
        stats_fh.close()
        timing_fh.close()
    outputs = ["config.json", "stats.csv", "timing.csv"]
    for step, actor in sorted(result.checkpoints.items()):
        name = f"ckpt_{step:08d}.qfck"
        save_checkpoint(out / name, actor, cfg.env, step, seed)
        outputs.append(name)
    save_checkpoint(out / "final.qfck", result.actor, cfg.env, cfg.td3.total_steps, seed)
    outputs.append("final.qfck")
    manifest = {
        "config_hash": cfg.hash(),
        "seed": seed,
        "start_time": started,
        "revision": source_revision(),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return result


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.steps is not None:
        cfg.td3 = replace(cfg.td3, total_steps=args.steps)
    run_train(cfg, args.seed, args.out)
    return EXIT_OK


# -- eval / track ----------------------------------------------------------------------


def _summary(label, values, unit=""):
    v = np.asarray(values, dtype=float)
    if len(v) == 0 or not np.isfinite(v).any():
        return f"{label}: mean inf  median inf  min inf{unit}"
    return f"{label}: mean {np.mean(v):.4f}  median {np.median(v):.4f}  min {np.min(v):.4f}{unit}"


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    env = ck.env.deployment()
    seeds = parse_seeds(args.seeds)
    rows = []
    for s in seeds:
        r = evaluate(ck.actor, env, args.episodes, (s, 3))
        ok = bool(np.all(r.lengths >= env.max_steps))
        rows.append((s, r.mean_length, r.mean_return, float(np.mean(r.errors)), int(ok)))
    if args.out:
        _write_csv(args.out, ("seed", "length_mean", "return_mean", "xy_error_m", "success"), rows)
    print(f"checkpoint step {ck.step}, training seed {ck.seed}, {len(seeds)} seeds x {args.episodes} episodes")
    print(_summary("episode length", [r[1] for r in rows]))
    print(_summary("return", [r[2] for r in rows]))
    print(_summary("xy error", [r[3] for r in rows], " m"))
    print(f"success: {sum(r[4] for r in rows)}/{len(rows)}")
    return EXIT_OK


def cmd_track(args) -> int:
    seeds = parse_seeds(args.seeds)
    spec = LissajousSpec(period=args.interval)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.pid:
        cfg = RunConfig.load(args.config)
        label = "pid"
    else:
        if args.checkpoint is None:
            raise UsageError("track needs --checkpoint or --pid")
        ck = load_checkpoint(args.checkpoint)
        label = f"checkpoint step {ck.step}"
    rows = []
    for s in seeds:
        if args.pid:
            res = run_pid_tracking(PidController(cfg.env.params, cfg.pid), cfg.env.deployment(), spec, (s, 4))
        else:
            res = run_tracking(ck.actor, ck.env.deployment(), spec, (s, 4))
        rows.append((s, res.rmse, res.rmse_xy, int(res.success), float(res.t[-1])))
        if out:
            res.to_csv(out / f"track_T{args.interval:g}_seed{s}.csv")
    if out:
        _write_csv(out / f"summary_T{args.interval:g}.csv", ("seed", "rmse_m", "rmse_xy_m", "success", "duration_s"), rows)
    ok = [r for r in rows if r[3]]
    print(f"{label}: T = {args.interval:g} s, {spec.cycles} cycles, {len(seeds)} seeds")
    print(_summary("rmse (xyz)", [r[1] for r in ok], " m"))
    print(_summary("rmse (xy)", [r[2] for r in ok], " m"))
    print(f"success: {len(ok)}/{len(rows)}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------------------------


def bench(params, batch_sizes, duration: float, dt: float, seed: int = 0):
    """Measure ``step_batch`` throughput and check batched/sequential equality."""
    from quadfly.env import InitialStateDistribution, action_to_rpm, sample_initial_state

    rng = np.random.default_rng(seed)
    dist = InitialStateDistribution()
    rows = []
    for n in batch_sizes:
        S = np.array([sample_initial_state(dist, rng) for _ in range(n)])
        U = action_to_rpm(params, rng.uniform(-1, 1, (n, 4)))
        D = np.zeros((n, 6))
        got, _ = dyn.step_batch(params, S, U, D, dt)
        check = rng.choice(n, size=min(n, 32), replace=False)
        equal = all(np.array_equal(got[i], dyn.step_batch(params, S[i:i + 1], U[i:i + 1], D[i:i + 1], dt)[0][0])
                    for i in check)
        iters, t0 = 0, time.perf_counter()
        while True:
            dyn.step_batch(params, S, U, D, dt)
            iters += 1
            elapsed = time.perf_counter() - t0
            if elapsed >= duration:
                break
        sps = n * iters / elapsed
        rows.append({"batch": n, "steps_per_s": sps, "sim_s_per_wall_s": sps * dt, "equivalent": equal})
    return rows


def cmd_bench(args) -> int:
    cfg = RunConfig.load(args.config)
    sizes = [int(x) for x in args.batch_sizes.split(",")]
    rows = bench(cfg.env.params, sizes, args.duration, cfg.env.dt, args.seed)
    print(f"{'batch':>6} {'steps/s':>14} {'sim s / wall s':>15} {'batched == sequential':>22}")
    for r in rows:
        print(f"{r['batch']:>6} {r['steps_per_s']:>14.4g} {r['sim_s_per_wall_s']:>15.4g} {str(r['equivalent']):>22}")
    ref = REFERENCE_GPU_STEPS_PER_S * cfg.env.dt
    best = max(r["sim_s_per_wall_s"] for r in rows)
    print(f"reference GPU pipeline: {REFERENCE_GPU_STEPS_PER_S:.4g} steps/s = {ref:.3g} sim s per wall s "
          f"(~{ref / 86400 / 30:.1f} months/s); best here {best:.3g} sim s per wall s ({best / ref:.2e} of it)")
    if args.out:
        Path(args.out).write_text(json.dumps({"dt_s": cfg.env.dt, "results": rows,
                                              "reference_gpu_steps_per_s": REFERENCE_GPU_STEPS_PER_S}, indent=2))
    return EXIT_OK if all(r["equivalent"] for r in rows) else EXIT_MISMATCH


# -- ablate ---------------------------------------------------------------------------------


def _slug(row: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in row.lower()).strip("_")


def _job_complete(d: Path, cfg: RunConfig, seed: int) -> bool:
    m = d / "manifest.json"
    if not m.exists():
        return False
    info = json.loads(m.read_text())
    return info.get("config_hash") == cfg.hash() and info.get("seed") == seed


def ablation_job(base: RunConfig, row: str, seed: int, out, eval_episodes: int, interval: float, reuse: bool):
    """Train one (row, seed) and score its checkpoints; returns a result dict."""
    cfg = replace(base, env=replace(base.env, ablation=Ablation.without(row)))
    d = Path(out) / _slug(row) / f"seed_{seed}"
    if not (reuse and _job_complete(d, cfg, seed)):
        run_train(cfg, seed, d, log=lambda msg: print(f"[{row} / {seed}] {msg}", flush=True))
    res = {"row": row, "seed": seed}
    ckpts = sorted(d.glob("ckpt_*.qfck")) + [d / "final.qfck"]
    for path in ckpts:
        ck = load_checkpoint(path)
        tag = "final" if path.name == "final.qfck" else str(ck.step)
        ev = evaluate(ck.actor, ck.env.deployment(), eval_episodes, (seed, 3))
        res[f"N_{tag}"] = ev.mean_length
        res[f"R_{tag}"] = ev.mean_return
    tr = run_tracking(load_checkpoint(d / "final.qfck").actor, cfg.env.deployment(), LissajousSpec(period=interval), (seed, 4))
    res["success"] = int(tr.success)
    res["e_xy"] = tr.rmse_xy if tr.success else float("inf")
    return res


def aggregate_ablation(results, rows):
    table = []
    for row in rows:
        rs = [r for r in results if r["row"] == row]
        keys = [k for k in rs[0] if k.startswith(("N_", "R_"))]
        entry = {"row": row, "seeds": len(rs)}
        for k in keys:
            entry[k] = float(np.mean([r[k] for r in rs]))
        entry["success"] = f"{sum(r['success'] for r in rs)}/{len(rs)}"
        e = [r["e_xy"] for r in rs if r["success"]]
        entry["e_mean"] = float(np.mean(e)) if e else float("inf")
        entry["e_med"] = float(np.median(e)) if e else float("inf")
        entry["e_min"] = float(np.min(e)) if e else float("inf")
        table.append(entry)
    return table


def cmd_ablate(args) -> int:
    rows = [r.strip() for r in args.rows.split(";")] if args.rows else list(ABLATIONS)
    for r in rows:
        if r not in ABLATIONS:
            raise UsageError(f"unknown ablation row {r!r}; valid rows: {', '.join(ABLATIONS)}")
    seeds = parse_seeds(args.seeds)
    base = RunConfig.load(args.config)
    if args.steps is not None:
        base.td3 = replace(base.td3, total_steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(base, r, s, out, args.eval_episodes, args.interval, args.reuse) for r in rows for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(ablation_job, *zip(*jobs)))
    else:
        results = [ablation_job(*j) for j in jobs]
    per_seed_keys = list(results[0])
    _write_csv(out / "runs.csv", per_seed_keys, [[r.get(k, "") for k in per_seed_keys] for r in results])
    table = aggregate_ablation(results, rows)
    keys = list(table[0])
    _write_csv(out / "table.csv", keys, [[t[k] for k in keys] for t in table])
    for t in table:
        print("  ".join(f"{k}={v:.1f}" if isinstance(v, float) else f"{k}={v}" for k, v in t.items()))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadfly", description="Quadrotor RL flight lab.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the hover task")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seeds", default="0-9")
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("track", help="figure-eight tracking with a checkpoint or the PID baseline")
    k.add_argument("--checkpoint")
    k.add_argument("--pid", action="store_true")
    k.add_argument("--config")
    k.add_argument("--interval", type=float, default=15.0, help="cycle time in seconds (15, 5.5, 3.5)")
    k.add_argument("--seeds", default="0-9")
    k.add_argument("--out")
    k.set_defaults(func=cmd_track)

    b = sub.add_parser("bench", help="simulator throughput")
    b.add_argument("--config")
    b.add_argument("--batch-sizes", default="1,128,8192")
    b.add_argument("--duration", type=float, default=2.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", help="train and score ablation rows")
    a.add_argument("--config")
    a.add_argument("--rows", help="';'-separated row names (default: all)")
    a.add_argument("--seeds", default="0-4")
    a.add_argument("--steps", type=int)
    a.add_argument("--interval", type=float, default=5.5)
    a.add_argument("--eval-episodes", type=int, default=50)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--reuse", action="store_true", help="skip (row, seed) runs already complete in --out")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
