"""Command-line interface: simulate, map, align, eval, bench, selftest.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import _kernels, __version__
from .alignment import (
    AlignmentParams,
    ConsistencyProblem,
    PutativeAssociation,
    align_maps,
    consistency_objective,
    densest_consistent_set,
    exact_consistent_oracle,
)
from .config import ConfigError, load_config
from .evaluate import (
    ScoredPair,
    bench_search,
    label_pairs,
    precision_recall,
    write_bench_csv,
    write_labels_csv,
    write_pr_csv,
)
from .geometry import CameraIntrinsics, estimate_rigid_transform, rot_z
from .ingest import (
    InvariantViolation,
    LogParseError,
    load_flight_log,
    save_flight_log,
)
from .mapio import MapFormatError, load_map, save_map
from .pipeline import build_map_from_log, regate_log
from .reconstruct import ReconstructionParams, triangulate_track
from .simulate import (
    FlightSpec,
    NoiseModel,
    SeasonModel,
    camera_pose,
    generate_world,
    lawnmower_waypoints,
    load_ground_truth,
    perturb_season,
    save_ground_truth,
    simulate_flight,
)
from .tracking import _solve_max_assignment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="objmap", description=__doc__)
    p.add_argument("--version", action="version", version=f"objmap {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    ps = sub.add_parser("simulate", help="generate a synthetic flight log + ground truth")
    ps.add_argument("--world-seed", type=int, default=1)
    ps.add_argument("--flight-seed", type=int, default=1)
    ps.add_argument("--density", type=float, default=2.5e-4, help="objects per m^2")
    ps.add_argument("--region", type=float, nargs=2, default=[2000.0, 2000.0], metavar=("X", "Y"))
    ps.add_argument("--extent-range", type=float, nargs=2, default=[0.5, 4.0])
    ps.add_argument("--altitude", type=float, default=50.0)
    ps.add_argument("--line-spacing", type=float, default=50.0)
    ps.add_argument("--lines", type=int, default=None, help="limit survey line count")
    ps.add_argument("--margin", type=float, default=25.0)
    ps.add_argument("--speed", type=float, default=8.0)
    ps.add_argument("--pitch", type=float, default=-90.0)
    ps.add_argument("--kf-spacing", type=float, default=2.0)
    ps.add_argument("--focal", type=float, default=400.0)
    ps.add_argument("--image-size", type=int, nargs=2, default=[400, 300], metavar=("W", "H"))
    ps.add_argument("--centroid-sigma", type=float, default=0.0)
    ps.add_argument("--detection-prob", type=float, default=1.0)
    ps.add_argument("--size-jitter", type=float, default=0.0)
    ps.add_argument("--odom-drift", type=float, default=0.0, help="m per m traveled")
    ps.add_argument("--odom-rot-drift", type=float, default=0.0, help="deg per m traveled")
    ps.add_argument("--season-dropout", type=float, default=0.0)
    ps.add_argument("--season-size-sigma", type=float, default=0.0)
    ps.add_argument("--season-spawn", type=float, default=0.0)
    ps.add_argument("--season-seed", type=int, default=0)
    ps.add_argument("--out", required=True, help="observation log path")
    ps.add_argument("--gt", default=None, help="ground-truth sidecar path")
    ps.set_defaults(func=_cmd_simulate)

    pm = sub.add_parser("map", help="build a vehicle map from an observation log")
    pm.add_argument("--log", required=True)
    pm.add_argument("--out", required=True)
    pm.add_argument("--config", default=None)
    pm.add_argument(
        "--min-spacing",
        type=float,
        default=None,
        help="re-gate keyframes to this spacing before tracking",
    )
    pm.set_defaults(func=_cmd_map)

    pa = sub.add_parser("align", help="windowed correspondence search between two maps")
    pa.add_argument("map_i")
    pa.add_argument("map_j")
    pa.add_argument("--config", default=None)
    pa.add_argument("--wl", type=int, default=None)
    pa.add_argument("--sl", type=int, default=None)
    pa.add_argument("--s-lim", type=int, default=None)
    pa.add_argument("--eps-lim", type=float, default=None)
    pa.add_argument("--r-lim", type=float, default=None)
    pa.add_argument("--alpha-lim", type=float, default=None)
    pa.add_argument("--workers", type=int, default=1)
    pa.add_argument("--backend", choices=["auto", "python", "native"], default="auto")
    pa.add_argument("--report", required=True, help="hypothesis CSV path")
    pa.set_defaults(func=_cmd_align)

    pe = sub.add_parser("eval", help="label window pairs and compute PR curves")
    pe.add_argument("--hyps", required=True, help="hypothesis CSV from 'align'")
    pe.add_argument("--map-i", required=True)
    pe.add_argument("--map-j", required=True)
    pe.add_argument("--gt-i", required=True)
    pe.add_argument("--gt-j", required=True)
    pe.add_argument("--config", default=None)
    pe.add_argument("--out-dir", required=True)
    pe.set_defaults(func=_cmd_eval)

    pb = sub.add_parser("bench", help="time the correspondence search over a WL/SL grid")
    pb.add_argument("--map-i", required=True)
    pb.add_argument("--map-j", required=True)
    pb.add_argument("--wl", default="50", help="comma-separated window lengths")
    pb.add_argument("--sl", default="10", help="comma-separated strides")
    pb.add_argument("--repeats", type=int, default=5)
    pb.add_argument("--workers", type=int, default=1)
    pb.add_argument("--config", default=None)
    pb.add_argument("--backend", choices=["auto", "python", "native"], default="auto")
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=_cmd_bench)

    pt = sub.add_parser("selftest", help="run built-in oracle-equivalence suites")
    pt.set_defaults(func=_cmd_selftest)
    return p


def _cmd_simulate(args) -> int:
    region = (0.0, 0.0, args.region[0], args.region[1])
    world = generate_world(
        args.world_seed, args.density, region, extent_range=tuple(args.extent_range)
    )
    if args.season_dropout or args.season_size_sigma or args.season_spawn:
        world = perturb_season(
            world,
            SeasonModel(
                dropout_frac=args.season_dropout,
                size_scale_sigma=args.season_size_sigma,
                spawn_frac=args.season_spawn,
            ),
            args.season_seed,
        )
    w, h = args.image_size
    intr = CameraIntrinsics(
        fx=args.focal, fy=args.focal, cx=w / 2.0, cy=h / 2.0, width=w, height=h
    )
    waypoints = lawnmower_waypoints(
        region,
        altitude=args.altitude,
        line_spacing=args.line_spacing,
        n_lines=args.lines,
        margin=args.margin,
    )
    spec = FlightSpec(
        waypoints, speed=args.speed, camera_pitch=args.pitch, keyframe_spacing=args.kf_spacing
    )
    noise = NoiseModel(
        centroid_sigma=args.centroid_sigma,
        detection_prob=args.detection_prob,
        size_jitter=args.size_jitter,
        odom_drift_sigma=args.odom_drift,
        odom_rot_drift_sigma=args.odom_rot_drift,
    )
    log, gt = simulate_flight(world, spec, noise, intr, args.flight_seed)
    save_flight_log(log, args.out)
    if args.gt:
        save_ground_truth(gt, args.gt)
    n_obs = sum(len(kf.observations) for kf in log.keyframes)
    print(f"keyframes={len(log.keyframes)} observations={n_obs} objects={len(world)}")
    return EXIT_OK


def _cmd_map(args) -> int:
    cfg = load_config(args.config)
    log = load_flight_log(args.log)
    if args.min_spacing is not None:
        log = regate_log(log, args.min_spacing)
    vmap, stats = build_map_from_log(log, cfg)
    save_map(vmap, args.out)
    print(f"objects={stats['objects']} diverged={stats['diverged']} tracks={stats['tracks']}")
    return EXIT_OK


def _write_report(hyps, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["offset_i", "offset_j", "n_assoc", "roll", "pitch", "yaw", "tx", "ty", "tz", "accepted"]
        )
        for hyp in hyps:
            t = hyp.transform.translation
            w.writerow(
                [
                    hyp.offset_i,
                    hyp.offset_j,
                    hyp.score,
                    repr(hyp.roll),
                    repr(hyp.pitch),
                    repr(hyp.yaw),
                    repr(float(t[0])),
                    repr(float(t[1])),
                    repr(float(t[2])),
                    "true" if hyp.accepted else "false",
                ]
            )


def _read_report(path, alpha_lim: float) -> list[ScoredPair]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            score = int(row["n_assoc"])
            angular_ok = score >= 3 and max(
                abs(float(row["roll"])), abs(float(row["pitch"]))
            ) <= alpha_lim
            out.append(
                ScoredPair(
                    offset_i=int(row["offset_i"]),
                    offset_j=int(row["offset_j"]),
                    score=score,
                    angular_ok=angular_ok,
                )
            )
    return out


def _cmd_align(args) -> int:
    cfg = load_config(
        args.config,
        overrides={
            "WL": args.wl,
            "SL": args.sl,
            "s_lim": args.s_lim,
            "eps_lim": args.eps_lim,
            "r_lim": args.r_lim,
            "alpha_lim": args.alpha_lim,
        },
    )
    map_i = load_map(args.map_i)
    map_j = load_map(args.map_j)
    hyps = align_maps(
        map_i, map_j, cfg.alignment_params(), workers=args.workers, backend=args.backend
    )
    _write_report(hyps, args.report)
    accepted = sum(1 for h in hyps if h.accepted)
    print(f"window_pairs={len(hyps)} accepted={accepted}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    params = cfg.alignment_params()
    pairs = _read_report(args.hyps, cfg.alpha_lim)
    map_i = load_map(args.map_i)
    map_j = load_map(args.map_j)
    gt_i = load_ground_truth(args.gt_i)
    gt_j = load_ground_truth(args.gt_j)
    labels = label_pairs(gt_i, gt_j, map_i, map_j, params)
    max_score = max((p.score for p in pairs), default=0)
    curve = precision_recall(pairs, labels, range(0, max_score + 1))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_labels_csv(labels, out_dir / "labels.csv")
    write_pr_csv(curve, out_dir / "pr_curve.csv")
    print(
        f"pairs={len(labels)} positives={sum(1 for l in labels if l.label == 'positive')} "
        f"average_f1={curve.average_f1:.4f}"
    )
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    map_i = load_map(args.map_i)
    map_j = load_map(args.map_j)
    wl_list = [int(x) for x in args.wl.split(",") if x]
    sl_list = [int(x) for x in args.sl.split(",") if x]
    rows = bench_search(
        map_i,
        map_j,
        wl_list,
        sl_list,
        repeats=args.repeats,
        base_params=cfg.alignment_params(),
        workers=args.workers,
        backend=args.backend,
    )
    write_bench_csv(rows, args.out)
    for r in rows:
        print(f"WL={r['WL']} SL={r['SL']} mean={r['mean_s']:.4f}s std={r['std_s']:.4f}s")
    return EXIT_OK


# -- selftest -----------------------------------------------------------------


def _brute_assignment_score(score: np.ndarray) -> float:
    """Exact max-total assignment via bitmask DP over columns."""
    r, c = score.shape
    dp = {0: 0.0}
    for i in range(r):
        nxt = dict(dp)
        for mask, tot in dp.items():
            for j in range(c):
                if mask & (1 << j) or not np.isfinite(score[i, j]):
                    continue
                key = mask | (1 << j)
                val = tot + score[i, j]
                if val > nxt.get(key, -math.inf):
                    nxt[key] = val
        dp = nxt
    return max(dp.values())


def _selftest_assignment(rng) -> str:
    for _ in range(200):
        r = int(rng.integers(1, 6))
        c = int(rng.integers(1, 6))
        S = rng.integers(0, 1000, size=(r, c)).astype(float)
        S[rng.uniform(size=(r, c)) < 0.3] = -np.inf
        pairs = _solve_max_assignment(S)
        got = math.fsum(S[i, j] for i, j in pairs)
        want = _brute_assignment_score(S)
        if got != want:
            raise AssertionError(f"assignment score {got} != brute force {want}")
    return "200 random matrices up to 5x5"


def _random_consistency_problem(rng, n: int) -> ConsistencyProblem:
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < 0.5:
                A[i, j] = A[j, i] = rng.uniform(0.05, 1.0)
    np.fill_diagonal(A, rng.uniform(0.1, 2.0, n))
    assocs = [PutativeAssociation(k, k, float(A[k, k])) for k in range(n)]
    return ConsistencyProblem(assocs, A)


def _selftest_consistency(rng) -> str:
    worst = 1.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        prob = _random_consistency_problem(rng, n)
        sel = densest_consistent_set(prob)
        ref = exact_consistent_oracle(prob)
        u_sel = consistency_objective(prob, sel)
        u_ref = consistency_objective(prob, ref)
        if u_ref > 0:
            worst = min(worst, u_sel / u_ref)
        if u_sel > u_ref + 1e-12:
            raise AssertionError("heuristic beat the exact oracle; oracle is wrong")
    if worst < 0.9:
        raise AssertionError(f"spectral rounding fell to {worst:.3f} of optimum")
    return f"100 random problems, worst objective ratio {worst:.3f}"


def _selftest_triangulation(rng) -> str:
    intr = CameraIntrinsics(fx=400.0, fy=400.0, cx=200.0, cy=150.0, width=400, height=300)
    params = ReconstructionParams()
    for _ in range(20):
        target = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
        poses = []
        centroids = []
        for k in range(6):
            pos = np.array([-20.0 + 8.0 * k + rng.uniform(-1, 1), rng.uniform(-2, 2), 50.0])
            pose = camera_pose(pos, heading_deg=0.0, pitch_deg=-90.0)
            cam = pose.rotation.T @ (target - pose.translation)
            px = np.array(
                [intr.fx * cam[0] / cam[2] + intr.cx, intr.fy * cam[1] / cam[2] + intr.cy]
            )
            poses.append(pose)
            centroids.append(px)
        est = triangulate_track(np.array(centroids), poses, intr, params)
        if est is None or np.linalg.norm(est - target) > 1e-6:
            raise AssertionError(f"noiseless triangulation error {est} vs {target}")
    return "20 noiseless tracks recovered to < 1e-6 m"


def _selftest_registration(rng) -> str:
    for _ in range(20):
        pts = rng.uniform(-50, 50, size=(8, 3))
        R = rot_z(float(rng.uniform(-180, 180)))
        t = rng.uniform(-100, 100, 3)
        est = estimate_rigid_transform(pts, pts @ R.T + t)
        if np.abs(est.rotation - R).max() > 1e-9 or np.abs(est.translation - t).max() > 1e-9:
            raise AssertionError("rigid transform round trip failed")
    return "20 exact transform recoveries"


def _selftest_mapio(rng) -> str:
    from .simulate import synthetic_map

    vmap = synthetic_map(100, seed=3)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.map"
        save_map(vmap, path)
        loaded = load_map(path)
    if len(loaded) != len(vmap):
        raise AssertionError("map round trip lost objects")
    if np.abs(loaded.positions() - vmap.positions()).max() > 1e-3:
        raise AssertionError("map round trip moved objects")
    return "100-object map round trip"


def _cmd_selftest(args) -> int:
    rng = np.random.default_rng(20240601)
    suites = [
        ("assignment-oracle", _selftest_assignment),
        ("consistency-oracle", _selftest_consistency),
        ("triangulation", _selftest_triangulation),
        ("registration", _selftest_registration),
        ("map-io", _selftest_mapio),
    ]
    failed = False
    for name, fn in suites:
        try:
            detail = fn(rng)
            print(f"selftest {name}: ok ({detail})")
        except AssertionError as e:
            failed = True
            print(f"selftest {name}: FAIL ({e})")
    print(f"kernel backend: {_kernels.backend_name()}")
    return EXIT_DATA if failed else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (
        LogParseError,
        InvariantViolation,
        MapFormatError,
        ConfigError,
        FileNotFoundError,
        ValueError,
    ) as e:
        print(f"objmap: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
