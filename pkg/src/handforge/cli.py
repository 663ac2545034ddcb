"""Command-line entry point.

Subcommands wire the library into file-based workflows: asset generation
and validation, forward evaluation, gradient auditing, fitting, dataset
generation, depth rendering, preprocessing, and the embedding protocol
server. Exit codes: 0 success, 1 usage error, 2 validation or runtime
error. The default model comes from --model or the HANDFORGE_MODEL
environment variable; otherwise the bundled procedural asset is used.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import fileio
from .fitting import FitOptions, fit
from .generator import GenConfig, generate_default_model
from .hpsl import hpsl_forward, jacobian_set, loss
from .kinematics import N_SCALE_SLOTS, ParamVector
from .model import AssetError, load_model, save_model, validate_model
from .preprocess import CropMeta, crop_meta, crop_normalize, hand_centroid
from .synth import (
    CameraIntrinsics,
    DepthFrame,
    SampleConfig,
    default_camera,
    generate_dataset,
    read_manifest_camera,
    render_depth,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve_model(path: str | None):
    path = path or os.environ.get("HANDFORGE_MODEL")
    if path:
        return load_model(path)
    return generate_default_model()


def _load_params(model, path) -> ParamVector:
    cols = fileio.read_params_csv(path)
    for key in ("delta_theta", "alpha", "beta"):
        if key not in cols:
            raise ValueError(f"parameter file missing {key} rows")
    return ParamVector(cols["delta_theta"], cols["alpha"], cols["beta"])


def _max_rel(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def _gradcheck(model, seed: int, trials: int, step: float):
    """Max relative error of every analytic block against central finite
    differences over random configurations."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in
             ("joints_pose", "joints_scale", "vertices_pose",
              "vertices_scale", "vertices_shape", "loss_gradient")}
    bounds = model.dof_bounds

    def flat_state(flat):
        return hpsl_forward(model, ParamVector.from_flat(model, flat))

    for _ in range(trials):
        delta = rng.uniform(bounds[:, 0], bounds[:, 1]) * 0.35
        delta[:3] = rng.uniform(-40, 40, 3)
        delta[3:6] = rng.uniform(-0.6, 0.6, 3)
        alpha = rng.uniform(0.7, 1.4, N_SCALE_SLOTS)
        beta = rng.uniform(-0.8, 0.8, model.n_morph_targets)
        params = ParamVector(delta, alpha, beta)
        state = hpsl_forward(model, params)
        js = jacobian_set(model, params, state)

        x = params.to_flat()
        nd = model.n_dofs
        nj, nv = 3 * model.n_joints, 3 * model.n_vertices
        fd_j = np.zeros((nj, x.size))
        fd_v = np.zeros((nv, x.size))
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            sp, sm = flat_state(xp), flat_state(xm)
            fd_j[:, i] = (sp.joint_positions - sm.joint_positions).reshape(-1) / (2 * step)
            fd_v[:, i] = (sp.vertices - sm.vertices).reshape(-1) / (2 * step)
        worst["joints_pose"] = max(worst["joints_pose"],
                                   _max_rel(js.joints.d_delta_theta, fd_j[:, :nd]))
        worst["joints_scale"] = max(worst["joints_scale"],
                                    _max_rel(js.joints.d_alpha, fd_j[:, nd:nd + 6]))
        worst["vertices_pose"] = max(worst["vertices_pose"],
                                     _max_rel(js.vertices.d_delta_theta, fd_v[:, :nd]))
        worst["vertices_scale"] = max(worst["vertices_scale"],
                                      _max_rel(js.vertices.d_alpha, fd_v[:, nd:nd + 6]))
        worst["vertices_shape"] = max(worst["vertices_shape"],
                                      _max_rel(js.vertices.d_beta, fd_v[:, nd + 6:]))

        p_gt = state.joint_positions + rng.normal(0, 5, state.joint_positions.shape)
        v_gt = state.vertices + rng.normal(0, 5, state.vertices.shape)
        from .hpsl import hpsl_backward
        g = hpsl_backward(model, params, state, p_gt, v_gt).to_flat()
        fd_g = np.zeros(x.size)
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            fd_g[i] = (loss(flat_state(xp), p_gt, v_gt).combined
                       - loss(flat_state(xm), p_gt, v_gt).combined) / (2 * step)
        worst["loss_gradient"] = max(worst["loss_gradient"], _max_rel(g, fd_g))
    return worst


def _cmd_model_gen(args) -> int:
    cfg = GenConfig(seed=args.seed, scale=args.scale)
    model = generate_default_model(cfg)
    save_model(model, args.out)
    print(f"wrote {args.out} ({model.n_vertices} vertices, "
          f"{model.n_faces} faces, {model.n_dofs} DoFs)")
    return EXIT_OK


def _cmd_model_validate(args) -> int:
    model = load_model(args.path)
    validate_model(model)
    print(f"{args.path}: valid ({model.n_joints} joints, {model.n_dofs} DoFs, "
          f"{model.n_vertices} vertices, {model.n_faces} faces)")
    return EXIT_OK


def _cmd_forward(args) -> int:
    model = _resolve_model(args.model)
    params = _load_params(model, args.params)
    state = hpsl_forward(model, params)
    fileio.write_params_csv(args.out_joints, params.delta_theta, params.alpha,
                            params.beta, joints=state.joint_positions)
    fileio.write_obj(args.out_mesh, state.vertices, model.faces)
    print(f"wrote {args.out_joints} and {args.out_mesh}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    model = _resolve_model(args.model)
    worst = _gradcheck(model, args.seed, args.trials, args.step)
    overall = max(worst.values())
    if args.format == "csv":
        print("block,max_relative_error")
        for k, v in worst.items():
            print(f"{k},{v:.3e}")
        print(f"overall,{overall:.3e}")
    else:
        for k, v in worst.items():
            print(f"{k:16s} max rel err {v:.3e}")
        print(f"{'overall':16s} max rel err {overall:.3e} "
              f"({'OK' if overall <= args.tolerance else 'FAIL'})")
    return EXIT_OK if overall <= args.tolerance else EXIT_ERROR


def _cmd_fit(args) -> int:
    model = _resolve_model(args.model)
    cols = fileio.read_params_csv(args.targets)
    if "joint" not in cols:
        raise ValueError("target file has no joint rows")
    vertices = None
    if args.mesh:
        vertices, _ = fileio.read_obj(args.mesh)
    init = ParamVector.neutral(model)
    opts = FitOptions(method=args.method, max_iterations=args.max_iterations)
    result = fit(model, cols["joint"], vertices, init, opts)
    if args.format == "csv":
        print("key,value")
        print(f"converged,{int(result.converged)}")
        print(f"iterations,{result.iterations}")
        print(f"joint_loss,{result.joint_loss!r}")
        print(f"vertex_loss,{result.vertex_loss!r}")
        print(f"mean_joint_error_mm,{result.mean_joint_error_mm!r}")
        print(f"mean_vertex_error_mm,{result.mean_vertex_error_mm!r}")
    else:
        print(f"converged={result.converged} iterations={result.iterations}")
        print(f"mean joint error  {result.mean_joint_error_mm:.6f} mm")
        print(f"mean vertex error {result.mean_vertex_error_mm:.6f} mm")
        for note in result.notes:
            print(f"note: {note}")
    if args.out:
        fileio.write_params_csv(args.out, result.params.delta_theta,
                                result.params.alpha, result.params.beta)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_dataset_gen(args) -> int:
    model = _resolve_model(args.model)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = SampleConfig.from_json(fh.read())
        if args.count is not None or args.seed is not None:
            from dataclasses import replace
            cfg = replace(cfg,
                          count=args.count if args.count is not None else cfg.count,
                          seed=args.seed if args.seed is not None else cfg.seed)
    else:
        cfg = SampleConfig(count=args.count if args.count is not None else 100,
                           seed=args.seed if args.seed is not None else 0)
    manifest = generate_dataset(model, cfg, args.out, jobs=args.jobs)
    print(f"wrote {manifest['count']} samples to {args.out} "
          f"(config {manifest['config_hash'][:12]})")
    return EXIT_OK


def _cmd_render(args) -> int:
    model = _resolve_model(args.model)
    params = _load_params(model, args.params)
    state = hpsl_forward(model, params)
    frame = render_depth(state.vertices, model.faces, model.part_labels,
                         default_camera())
    fileio.write_pgm16(args.out_depth, frame.depth)
    fileio.write_pgm8(args.out_label, frame.labels)
    print(f"wrote {args.out_depth} and {args.out_label}")
    return EXIT_OK


def _preprocess_one(task) -> str:
    path, out_dir, cam, foreground, half_extent = task
    depth = fileio.read_pgm(path)
    frame = DepthFrame(depth=depth,
                       labels=(depth > 0).astype(np.uint8), camera=cam)
    center = hand_centroid(frame, foreground_mode=foreground)
    meta = crop_meta(cam, center, half_extent)
    image, meta = crop_normalize(frame, meta)
    stem = os.path.splitext(os.path.basename(path))[0]
    blob = os.path.join(out_dir, stem + ".f32")
    meta_path = os.path.join(out_dir, stem + "_meta.csv")
    fileio.write_float_blob(blob, image)
    with open(meta_path, "w", encoding="ascii") as fh:
        fh.write(meta.to_csv())
    return f"wrote {blob} and {meta_path}"


def _cmd_preprocess(args) -> int:
    if args.manifest:
        cam = read_manifest_camera(args.manifest)
    else:
        cam = default_camera()
    os.makedirs(args.out_dir, exist_ok=True)
    tasks = [(path, args.out_dir, cam, args.foreground, args.half_extent)
             for path in args.inputs]
    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        import multiprocessing
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(jobs, len(tasks))) as pool:
            for line in pool.map(_preprocess_one, tasks):
                print(line)
    else:
        for task in tasks:
            print(_preprocess_one(task))
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .serve import serve
    return serve()


def build_parser() -> _Parser:
    p = _Parser(prog="handforge", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("model", help="asset generation and validation")
    msub = pm.add_subparsers(dest="model_command", required=True)
    g = msub.add_parser("gen", help="write the procedural default asset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.set_defaults(func=_cmd_model_gen)
    v = msub.add_parser("validate", help="validate an asset file")
    v.add_argument("path")
    v.set_defaults(func=_cmd_model_validate)

    f = sub.add_parser("forward", help="evaluate the layer on a parameter file")
    f.add_argument("--model")
    f.add_argument("--params", required=True)
    f.add_argument("--out-joints", required=True)
    f.add_argument("--out-mesh", required=True)
    f.set_defaults(func=_cmd_forward)

    gc = sub.add_parser("gradcheck",
                        help="audit analytic gradients against finite differences")
    gc.add_argument("--model")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--trials", type=int, default=10)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-5)
    gc.add_argument("--format", choices=("text", "csv"), default="text")
    gc.set_defaults(func=_cmd_gradcheck)

    ft = sub.add_parser("fit", help="fit parameters to joint/vertex targets")
    ft.add_argument("--model")
    ft.add_argument("--targets", required=True,
                    help="CSV with joint rows (dataset params file)")
    ft.add_argument("--mesh", help="optional OBJ with vertex targets")
    ft.add_argument("--out", help="write fitted parameters CSV here")
    ft.add_argument("--method", choices=("gauss-newton", "gradient-descent"),
                    default="gauss-newton")
    ft.add_argument("--max-iterations", type=int, default=60)
    ft.add_argument("--format", choices=("text", "csv"), default="text")
    ft.set_defaults(func=_cmd_fit)

    ds = sub.add_parser("dataset", help="synthetic dataset generation")
    dsub = ds.add_subparsers(dest="dataset_command", required=True)
    dg = dsub.add_parser("gen", help="generate depth/label/params/mesh samples")
    dg.add_argument("--model")
    dg.add_argument("--out", required=True)
    dg.add_argument("--count", type=int)
    dg.add_argument("--seed", type=int)
    dg.add_argument("--config", help="SampleConfig JSON file (flags override)")
    dg.add_argument("--jobs", type=int)
    dg.set_defaults(func=_cmd_dataset_gen)

    r = sub.add_parser("render", help="render one parameter file to depth/label")
    r.add_argument("--model")
    r.add_argument("--params", required=True)
    r.add_argument("--out-depth", required=True)
    r.add_argument("--out-label", required=True)
    r.set_defaults(func=_cmd_render)

    pp = sub.add_parser("preprocess", help="normalize depth frames to 96x96")
    pp.add_argument("inputs", nargs="+")
    pp.add_argument("--out-dir", required=True)
    pp.add_argument("--manifest", help="dataset manifest supplying intrinsics")
    pp.add_argument("--half-extent", type=float, default=150.0)
    pp.add_argument("--foreground", choices=("nonzero", "near-band"),
                    default="nonzero")
    pp.add_argument("--jobs", type=int)
    pp.set_defaults(func=_cmd_preprocess)

    sv = sub.add_parser("serve", help="binary embedding protocol on stdio")
    sv.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (AssetError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
