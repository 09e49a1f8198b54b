"""Command-line entry points, scene generation, batch metrics and CSV export.

Exit codes: 0 success, 2 safety violation, 3 generation or parse error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .constraints import DegenerateObstacleError, Obstacle
from .controller import ControllerConfig, bound_summary, simulate_closed_loop
from .interval import IntervalMatrix
from .planner import (
    EpisodeLog,
    PlannerConfig,
    PlanningError,
    PlanningProblem,
    config_collision_free,
    prepare,
    run_episodes,
    stack_params,
    safety_audit,
    solve_opt,
    straight_line_hlp,
)
from .polyzono import param_id
from .robot import IntervalInertialParams, ModelError, eigen_bounds, load_model
from .trajectory import InitialCondition, bernstein_coeffs, default_eta

EXIT_OK, EXIT_UNSAFE, EXIT_INPUT = 0, 2, 3


class SceneError(ValueError):
    pass


# Desk-scale settings for the bundled fixtures. ``V_M`` is smaller than the
# bound-arithmetic example so the tracking band stays a few centimetres at
# the tip of a 2 m arm; ``eta1`` is wider than the 7-DOF default so an
# episode reaches its goal in a handful of plans.
ROBOT_DEFAULTS = {
    "planar2": {"V_M": 1e-4, "Kr": 5.0, "eta1": np.pi / 12, "hlp_step": np.pi / 12,
                "workspace": (0.5, 1.9), "half_width": (0.05, 0.2), "half_height": 0.3, "goal_span": 1.2},
    "spatial3": {"V_M": 1e-4, "Kr": 5.0, "eta1": np.pi / 24, "hlp_step": np.pi / 24,
                 "workspace": (0.3, 0.7), "half_width": (0.03, 0.08), "half_height": 0.08, "goal_span": 0.8},
}


def robot_defaults(robot: str) -> dict:
    return ROBOT_DEFAULTS.get(Path(robot).stem, ROBOT_DEFAULTS["planar2"])


# ---------------------------------------------------------------------------
# scenes


def _obstacle_from_json(doc) -> Obstacle:
    c = doc["center"]
    if "half_widths" in doc:
        return Obstacle.box(c, doc["half_widths"])
    if "generators" in doc:
        return Obstacle(c, doc["generators"])
    raise SceneError("obstacle needs half_widths or generators")


def gen_scene(n_obstacles: int, seed: int, robot: str = "planar2", bounds=None, margin: float = 0.1,
              timing=None, max_tries: int = 2000) -> dict:
    """Random box obstacles with collision-free start and goal poses.

    ``bounds`` overrides ``(r_min, r_max)``, the radial range of obstacle
    centres in the horizontal plane. Start and goal keep ``margin`` metres
    of face separation from every obstacle.
    """
    if n_obstacles < 0:
        raise SceneError("n_obstacles must be nonnegative")
    model, _, _ = load_model(robot)
    d = robot_defaults(robot)
    r_min, r_max = d["workspace"] if bounds is None else bounds
    rng = np.random.default_rng(seed)
    qlo, qhi = model.q_limits
    qlo, qhi = np.maximum(qlo, -np.pi) * 0.9, np.minimum(qhi, np.pi) * 0.9
    for _ in range(max_tries):
        q_start = rng.uniform(qlo, qhi)
        q_goal = np.clip(q_start + rng.uniform(-d["goal_span"], d["goal_span"], model.n_q), qlo, qhi)
        if np.max(np.abs(q_goal - q_start)) >= 0.3:
            break
    else:
        raise SceneError("could not draw distinct start and goal")
    obstacles = []
    tries = 0
    while len(obstacles) < n_obstacles:
        tries += 1
        if tries > max_tries:
            raise SceneError("rejection budget exhausted while placing obstacles")
        r, th = rng.uniform(r_min, r_max), rng.uniform(-np.pi, np.pi)
        half = np.append(rng.uniform(*d["half_width"], size=2), d["half_height"])
        center = np.array([r * np.cos(th), r * np.sin(th), 0.0])
        obs = Obstacle.box(center, half)
        if all(config_collision_free(model, q, [obs], margin) for q in (q_start, q_goal)):
            obstacles.append({"center": center.round(6).tolist(), "half_widths": half.round(6).tolist()})
    timing = timing or {"t_p": 0.5, "t_f": 1.0, "n_t": 40}
    return {"robot_file": robot, "obstacles": obstacles, "q_start": q_start.round(6).tolist(),
            "q_goal": q_goal.round(6).tolist(), "seed": int(seed), "timing": dict(timing)}


def scene_to_json(scene: dict) -> str:
    return json.dumps(scene, indent=1, sort_keys=True) + "\n"


def load_scene(path) -> dict:
    try:
        scene = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise SceneError(f"scene file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file {path} does not parse: {exc}") from exc
    for key in ("robot_file", "obstacles", "q_start", "q_goal"):
        if key not in scene:
            raise SceneError(f"scene is missing {key!r}")
    return scene


_SIGMA_CACHE: dict = {}


def controller_config(robot: str, model, iparams, V_M=None, Kr=None) -> ControllerConfig:
    d = robot_defaults(robot)
    key = (robot, iparams.mass.lo.tobytes(), iparams.mass.hi.tobytes(), iparams.inertia.lo.tobytes(),
           iparams.inertia.hi.tobytes(), iparams.com.lo.tobytes(), iparams.com.hi.tobytes())
    if key not in _SIGMA_CACHE:
        _SIGMA_CACHE[key] = eigen_bounds(model, iparams, 20_000)
    sm, sM = _SIGMA_CACHE[key]
    Kr = d["Kr"] if Kr is None else Kr
    return ControllerConfig(np.full(model.n_q, float(Kr)), d["V_M"] if V_M is None else V_M, 1.0, sm, sM)


def problem_from_scene(scene: dict, overrides: dict | None = None) -> PlanningProblem:
    """Build a planning problem; the true parameters are a seeded corner of the box."""
    overrides = overrides or {}
    robot = scene["robot_file"]
    model, params0, iparams = load_model(robot)
    d = robot_defaults(robot)
    timing = dict(scene.get("timing", {}))
    timing.update({k: v for k, v in overrides.items() if v is not None and k in ("t_p", "t_f", "n_t")})
    pc = PlannerConfig(t_p=float(timing.get("t_p", 0.5)), t_f=float(timing.get("t_f", 1.0)),
                       n_t=int(timing.get("n_t", 40)), eta1=d["eta1"], hlp_step=d["hlp_step"])
    rng = np.random.default_rng(scene.get("seed", 0))
    true = iparams.sample(rng, endpoints=True)
    obstacles = [_obstacle_from_json(o) for o in scene["obstacles"]]
    return PlanningProblem(model, params0, iparams, true, controller_config(robot, model, iparams), obstacles,
                           scene["q_start"], scene["q_goal"], pc)


# ---------------------------------------------------------------------------
# metrics and export


@dataclass
class EpisodeMetrics:
    scene_seed: int
    status: str
    goal_reached: bool
    crashed: bool
    violations: int
    iterations: int
    mean_solve_time: float
    max_solve_time: float
    mean_build_time: float
    min_clearance: float
    final_speed: float


def episode_metrics(scene: dict, problem: PlanningProblem, log: EpisodeLog, samples: int = 10) -> EpisodeMetrics:
    audit = safety_audit(log, problem.model, problem.obstacles, n_samples=samples)
    solve = [p.solve_time for p in log.plans] or [0.0]
    build = [p.build_time for p in log.plans] or [0.0]
    return EpisodeMetrics(int(scene.get("seed", 0)), log.status, log.goal_reached, audit.collisions > 0,
                          audit.violations, len(log.plans), float(np.mean(solve)), float(np.max(solve)),
                          float(np.mean(build)), float(audit.min_clearance), audit.final_speed)


def _run_chunk(args):
    scenes, overrides, samples = args
    problems = [problem_from_scene(s, overrides) for s in scenes]
    logs = run_episodes(problems)
    return [asdict(episode_metrics(s, p, lg, samples)) for s, p, lg in zip(scenes, problems, logs)]


def run_batch(scenes: list, overrides: dict | None = None, samples: int = 10, workers: int = 1) -> list:
    """Run and audit every scene; returns one :class:`EpisodeMetrics` per scene.

    Scenes are split across ``workers`` processes; inside a worker the
    episodes share batched tracking simulations.
    """
    if not scenes:
        return []
    workers = max(1, min(workers, len(scenes)))
    chunks = [scenes[i::workers] for i in range(workers)]
    if workers == 1:
        results = [_run_chunk((chunks[0], overrides, samples))]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_chunk, [(c, overrides, samples) for c in chunks]))
    by_seed = {}
    for chunk, res in zip(chunks, results):
        for s, r in zip(chunk, res):
            by_seed[id(s)] = EpisodeMetrics(**r)
    return [by_seed[id(s)] for s in scenes]


def write_metrics(metrics: list, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [asdict(m) for m in metrics]
    (out / "metrics.json").write_text(json.dumps(rows, indent=1) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def export_plots(log: EpisodeLog, problem: PlanningProblem, out_dir) -> dict:
    """Plain CSV files for plotting.

    ``tracking.csv``: one row per simulation step (t, q, qd, e, ed, u, v, r_norm).
    ``inputs.csv``: t, then u_j with its lower and upper limit per joint.
    ``fo_boxes.csv``: first plan's occupancy boxes sliced at its k, one row
    per (step, link): step, link, lo_x, lo_y, lo_z, hi_x, hi_y, hi_z.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"tracking": out / "tracking.csv", "inputs": out / "inputs.csv", "fo_boxes": out / "fo_boxes.csv"}
    log.to_csv(files["tracking"])
    ulo, uhi = problem.model.u_limits
    n = problem.model.n_q
    head = ["t"] + [f"{c}{j}" for j in range(n) for c in ("u", "u_lo", "u_hi")]
    cols = [log.t]
    for j in range(n):
        cols += [log.u[:, j], np.full(len(log.t), ulo[j]), np.full(len(log.t), uhi[j])]
    np.savetxt(files["inputs"], np.column_stack(cols), delimiter=",", header=",".join(head), comments="")
    rows = []
    first = next((p for p in log.plans if p.success), None)
    if first is not None:
        prep = prepare(problem, InitialCondition.at_rest(problem.q_start))
        sl = {param_id(j): first.k[j] for j in range(n)}
        for b in prep.bundles:
            for li, fo in enumerate(b.FO):
                lo, hi = fo.slice(sl).bounds()
                rows.append([b.i, li, *lo, *hi])
    with open(files["fo_boxes"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "link", "lo_x", "lo_y", "lo_z", "hi_x", "hi_y", "hi_z"])
        w.writerows(rows)
    return files


# ---------------------------------------------------------------------------
# controller comparison


def stack_interval_params(items: list) -> IntervalInertialParams:
    def st(attr):
        return IntervalMatrix(np.stack([getattr(p, attr).lo for p in items]),
                              np.stack([getattr(p, attr).hi for p in items]))

    return IntervalInertialParams(st("mass"), st("com"), st("inertia"))


def compare_controllers(robot: str = "planar2", levels=None, trials: int = 20, seed: int = 0,
                        duration: float = 2.5, pos_perturb_deg: float = 4.5, vel_perturb_deg: float = 9.0,
                        dt: float = 1e-3, V_M: float = 1e-2) -> dict:
    """Max robust-input magnitude per joint for both controllers over an uncertainty sweep.

    Each trial tracks a random trajectory of length ``duration`` from an
    initial state offset by the given magnitudes (random sign per joint).
    The comparison controller uses the gain that gives it the same uniform
    bound. Returns medians over trials, shape ``(levels, n)`` per controller.
    """
    levels = np.linspace(0.0, 0.30, 7) if levels is None else np.asarray(levels, float)
    model, params0, _ = load_model(robot)
    n = model.n_q
    rng = np.random.default_rng(seed)
    d = robot_defaults(robot)
    ivs, trues, trajs, q0s, qd0s, kappas, cfgs = [], [], [], [], [], [], []
    for lvl in levels:
        ip = IntervalInertialParams.from_fractions(params0, lvl, lvl)
        cfg = controller_config(robot, model, ip, V_M=V_M)
        cfgs.append(cfg)
        for _ in range(trials):
            init = InitialCondition(rng.uniform(-1.0, 1.0, n), np.zeros(n), np.zeros(n))
            traj = bernstein_coeffs(init, rng.uniform(-1, 1, n), default_eta(init, d["eta1"]), t_f=duration)
            ivs.append(ip)
            trues.append(ip.sample(rng, endpoints=True))
            trajs.append(traj)
            q0s.append(init.q + np.deg2rad(pos_perturb_deg) * rng.choice([-1.0, 1.0], n))
            qd0s.append(np.deg2rad(vel_perturb_deg) * rng.choice([-1.0, 1.0], n))
            kappas.append(np.sqrt(cfg.sigma_M / (2.0 * cfg.V_M)))
    iparams = stack_interval_params(ivs)
    true = stack_params(trues)
    # V_M, Kr and alpha_c are shared; the per-level sigma only enters kappa
    cfg0 = cfgs[0]
    out = {"levels": levels.tolist()}
    for name in ("armour", "baseline"):
        log = simulate_closed_loop(model, true, trajs, cfg0, params0, iparams, dt=dt, q0=np.stack(q0s),
                                   qd0=np.stack(qd0s), t_end=duration, controller=name,
                                   baseline_kappa=np.array(kappas) if name == "baseline" else None)
        vmax = np.abs(log.v).max(axis=0).reshape(len(levels), trials, n)
        out[name] = np.median(vmax, axis=1).tolist()
    return out


def comparison_verdict(result: dict) -> dict:
    """Shape checks: slower growth (least-squares slope) and smaller at every level >= 5%."""
    lv = np.asarray(result["levels"])
    a, b = np.asarray(result["armour"]), np.asarray(result["baseline"])
    slope = lambda y: np.polyfit(lv, y, 1)[0]
    slower = all(slope(a[:, j]) < slope(b[:, j]) for j in range(a.shape[1]))
    smaller = bool(np.all(a[lv >= 0.05 - 1e-12] < b[lv >= 0.05 - 1e-12]))
    return {"slower_growth": bool(slower), "smaller_from_5pct": smaller}


# ---------------------------------------------------------------------------
# CLI


def _overrides(args) -> dict:
    return {"t_p": args.tp, "t_f": args.tf, "n_t": args.nt}


def _scene_arg(args) -> dict:
    if args.scene:
        return load_scene(args.scene)
    return gen_scene(args.n_obstacles, args.seed, args.robot)


def cmd_gen_scene(args) -> int:
    scene = gen_scene(args.n_obstacles, args.seed, args.robot)
    text = scene_to_json(scene)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"scene_{args.seed}.json").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plan(args) -> int:
    scene = _scene_arg(args)
    problem = problem_from_scene(scene, _overrides(args))
    init = InitialCondition.at_rest(problem.q_start)
    wp = straight_line_hlp(problem.q_start, problem.q_goal, init.q, problem.config.hlp_step)
    result, prep = solve_opt(problem, init, wp)
    doc = {"success": result.success, "solve_time": result.solve_time, "build_time": prep.build_time,
           "iterations": result.iterations, "max_constraint": result.max_constraint,
           "n_constraints": prep.constraints.n_constraints, "waypoint": wp.tolist()}
    doc.update({"k": result.k.tolist(), "cost": result.cost} if result.success else {"reason": result.reason})
    text = json.dumps(doc, indent=1)
    print(text)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "plan.json").write_text(text + "\n")
    return EXIT_OK


def cmd_episode(args) -> int:
    scene = _scene_arg(args)
    problem = problem_from_scene(scene, _overrides(args))
    log = run_episodes([problem])[0]
    m = episode_metrics(scene, problem, log, args.samples)
    print(json.dumps(asdict(m), indent=1))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "episode.json").write_text(json.dumps(log.to_dict(), indent=1) + "\n")
        export_plots(log, problem, out)
    return EXIT_UNSAFE if m.violations else EXIT_OK


def cmd_batch(args) -> int:
    scenes = [gen_scene(args.n_obstacles, args.seed + i, args.robot) for i in range(args.n_scenes)]
    t0 = time.perf_counter()
    metrics = run_batch(scenes, _overrides(args), args.samples, args.workers)
    if args.out_dir:
        write_metrics(metrics, args.out_dir)
    goals = sum(m.goal_reached for m in metrics)
    crashes = sum(m.crashed for m in metrics)
    bad = sum(m.violations > 0 for m in metrics)
    print(f"episodes {len(metrics)}  goals {goals}  crashes {crashes}  audit failures {bad}  "
          f"wall {time.perf_counter() - t0:.1f}s")
    return EXIT_UNSAFE if crashes or bad else EXIT_OK


def cmd_verify(args) -> int:
    from .verification import run_all

    report = run_all(args.samples, seed=args.seed)
    model, _, iparams = load_model(args.robot)
    bounds = bound_summary(controller_config(args.robot, model, iparams))
    print("bounds " + json.dumps(bounds))
    failed = 0
    for name, res in report.items():
        print(f"{'PASS' if res['violations'] == 0 else 'FAIL'} {name}: {res['violations']} violations "
              f"in {res['samples']} samples ({res['seconds']:.1f}s)")
        failed += res["violations"] > 0
    return EXIT_UNSAFE if failed else EXIT_OK


def cmd_compare(args) -> int:
    res = compare_controllers(args.robot, trials=args.samples, seed=args.seed)
    verdict = comparison_verdict(res)
    res.update(verdict)
    print("level  " + "  ".join(f"armour{j} baseline{j}" for j in range(len(res["armour"][0]))))
    for lv, a, b in zip(res["levels"], res["armour"], res["baseline"]):
        print(f"{lv:5.2f}  " + "  ".join(f"{x:7.3f} {y:9.3f}" for x, y in zip(a, b)))
    print(json.dumps(verdict))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "compare.json").write_text(json.dumps(res, indent=1) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="armour", description="Reachability-based safe planning for arms with uncertain inertia.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, samples_default):
        p.add_argument("--robot", default="planar2", help="fixture name or robot JSON path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--samples", type=int, default=samples_default)

    def scene_flags(p, with_scene=True):
        if with_scene:
            p.add_argument("--scene", default=None, help="scene JSON; generated from --seed if omitted")
        p.add_argument("--n-obstacles", type=int, default=4)
        p.add_argument("--tp", type=float, default=None, help="planning time budget (s)")
        p.add_argument("--tf", type=float, default=None, help="trajectory duration (s)")
        p.add_argument("--nt", type=int, default=None, help="time steps per trajectory")

    p = sub.add_parser("gen-scene", help="write a random scene")
    common(p, 10)
    p.add_argument("--n-obstacles", type=int, default=4)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("plan", help="one planning iteration from the scene start")
    common(p, 10)
    scene_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("episode", help="receding-horizon episode with audit and CSV export")
    common(p, 10)
    scene_flags(p)
    p.set_defaults(func=cmd_episode)

    p = sub.add_parser("batch", help="seeded random scenes, audited; nonzero exit on any violation")
    common(p, 10)
    scene_flags(p, with_scene=False)
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("verify", help="containment and gradient property suites")
    common(p, 1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare-controllers", help="robust-input sweep over model uncertainty")
    common(p, 20)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, ModelError, PlanningError, DegenerateObstacleError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
