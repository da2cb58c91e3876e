"""Command-line front end for the whole pipeline.

Every run appends a JSON line (command, config hash, seed, metrics, wall
time) to the runs log. Exit codes: 0 success, 1 user error, 2 internal
error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .aabb import AABBTree
from .body import (BodyState, build_template, default_body_config, identity_state,
                   load_body_config, pose_body)
from .config import ConfigError, ProjectConfig, load_config
from .garments import Category, generate_dataset, load_dataset, pose_bank
from .maps import CaseTag, load_uvmap, save_uvmap
from .mesh import MeshError, vertex_to_vertex_error
from . import nn
from .obj_io import ObjParseError, load_obj, save_obj
from .uvcodec import (NotHomotopyEncodableError, assign_uv_case1, assign_uv_case2,
                      decode_template_carried, decode_template_free, encode_tpose)
from . import shapespace, animator, infer as infermod


class UserError(ValueError):
    pass


def _template(config: ProjectConfig):
    if config.body_config:
        if not Path(config.body_config).exists():
            raise UserError(f"body config not found: {config.body_config}")
        return build_template(load_body_config(config.body_config))
    return build_template(default_body_config())


def _log_run(config: ProjectConfig, command: str, seed: int, metrics: dict, dt: float):
    entry = {"command": command, "config_hash": config.hash(), "seed": seed,
             "metrics": metrics, "wall_time_s": round(dt, 3)}
    with open(config.runs_log, "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _load_states(path, template) -> list:
    """Pose sequence JSON: a list of BodyState dicts or {"preset": name}."""
    with open(path) as fh:
        items = json.load(fh)
    bank = dict(pose_bank(template.skeleton))
    states = []
    for item in items:
        if "preset" in item:
            if item["preset"] not in bank:
                raise UserError(f"unknown pose preset {item['preset']}")
            theta = bank[item["preset"]]
            J = template.skeleton.n_joints
            states.append(BodyState(np.ones((J, 2)), theta))
        else:
            states.append(BodyState.from_dict(item))
    return states


def _parse_vector(text: str, n: int, name: str) -> np.ndarray:
    vals = [float(t) for t in text.replace(",", " ").split()]
    if len(vals) != n:
        raise UserError(f"{name} needs {n} values, got {len(vals)}")
    return np.asarray(vals)


def _require_pca(model):
    if model.pca is None:
        raise UserError("this model has no fitted PCA subspace; run fit-pca "
                        "on the shape-space checkpoint first")
    return model.pca


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="garmentspace",
                                description="garment shape space pipeline")
    p.add_argument("--config", default=None, help="project config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--category", required=True, choices=[c.value for c in Category])

    sp = sub.add_parser("encode", help="garment OBJ -> UVMP map")
    sp.add_argument("--garment", required=True)
    sp.add_argument("--case", choices=["auto", "1", "2"], default="auto")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("decode", help="UVMP map -> garment OBJ")
    sp.add_argument("--map", required=True)
    sp.add_argument("--garment", help="source garment OBJ for template-carried decode")
    sp.add_argument("--out", required=True)
    sp.add_argument("--gltf", action="store_true", help="also write a .gltf next to the OBJ")

    sp = sub.add_parser("train-paramnet", help="fit the shape space")
    sp.add_argument("--data", required=True, help="dataset dir (manifest.json inside)")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train-animnet", help="fit the animation regressor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train-infernet", help="fit the shape-from-mesh estimator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("fit-pca", help="fit the PCA subspace of a trained shape space")
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("interpolate", help="decode a parameter interpolation sweep")
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--a", required=True, help="start parameters, space separated")
    sp.add_argument("--b", required=True)
    sp.add_argument("--steps", type=int, default=5)
    sp.add_argument("--out", required=True, help="output directory for OBJ frames")

    sp = sub.add_parser("variation", help="decode a one-dimension +-sigma sweep point")
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--c", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--gltf", action="store_true", help="also write a .gltf next to the OBJ")

    sp = sub.add_parser("animate", help="animate a shape across a pose sequence")
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--animnet", required=True)
    sp.add_argument("--s", required=True, help="shape parameters")
    sp.add_argument("--poses", required=True, help="pose sequence JSON")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--gltf", action="store_true", help="also write .gltf frames")

    sp = sub.add_parser("infer", help="recover shape parameters from posed OBJs")
    sp.add_argument("--infernet", required=True)
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--garment", required=True)
    sp.add_argument("--human", required=True)
    sp.add_argument("--out", help="write result JSON here (default: stdout)")

    sp = sub.add_parser("edit-animate", help="infer, edit dims, and animate")
    sp.add_argument("--infernet", required=True)
    sp.add_argument("--paramnet", required=True)
    sp.add_argument("--animnet", required=True)
    sp.add_argument("--garment", required=True)
    sp.add_argument("--human", required=True)
    sp.add_argument("--edit", action="append", default=[], metavar="DIM=VALUE")
    sp.add_argument("--poses", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="mean vertex-to-vertex error in mm")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)

    sp = sub.add_parser("serve", help="run the HTTP api")
    sp.add_argument("--model-dir", default=None)
    sp.add_argument("--port", type=int, default=8000)

    return p


def _cmd_gen_data(args, config, seed):
    template = _template(config)
    manifest = generate_dataset(args.count, seed, args.out, Category(args.category), template)
    print(f"wrote {manifest['count']} samples to {args.out} "
          f"({manifest['n_train']} TRAIN / {manifest['n_test']} TEST)")
    return {"count": manifest["count"], "n_train": manifest["n_train"],
            "n_test": manifest["n_test"], "manifest_hash": manifest["_hash"]}


def _cmd_encode(args, config, seed):
    template = _template(config)
    garment = load_obj(args.garment)
    R = config.resolution
    if args.case in ("auto", "1"):
        try:
            guv = assign_uv_case1(garment, template, AABBTree(template.mesh),
                                  k=config.case1_k)
        except NotHomotopyEncodableError:
            if args.case == "1":
                raise
            guv = assign_uv_case2(garment, config.y0)
    else:
        guv = assign_uv_case2(garment, config.y0)
    m = encode_tpose(garment, guv, template, R)
    save_uvmap(m, args.out)
    print(f"encoded case {int(guv.case_tag)} map, {m.mask_texels()} mask texels -> {args.out}")
    return {"case": int(guv.case_tag), "mask_texels": m.mask_texels()}


def _cmd_decode(args, config, seed):
    template = _template(config)
    m = load_uvmap(args.map)
    if args.garment:
        garment = load_obj(args.garment)
        if m.case_tag == CaseTag.CASE1:
            guv = assign_uv_case1(garment, template, AABBTree(template.mesh),
                                  k=config.case1_k)
        else:
            guv = assign_uv_case2(garment, config.y0)
        mesh = decode_template_carried(m, guv, template)
    else:
        mesh, dropped = decode_template_free(m, template)
    save_obj(mesh, args.out)
    if args.gltf:
        from .gltf import save_gltf
        save_gltf(mesh, Path(args.out).with_suffix(".gltf"))
    print(f"decoded {mesh.n_vertices} vertices -> {args.out}")
    return {"vertices": mesh.n_vertices}


def _dataset_maps(config, template, data_dir, case_hint=None):
    samples = load_dataset(Path(data_dir) / "manifest.json")
    train = [s for s in samples if s.split == "TRAIN"]
    maps, guvs = [], []
    tree = AABBTree(template.mesh)
    for s in train:
        if s.spec.category == Category.SKIRT:
            guv = assign_uv_case2(s.tpose_garment, config.y0)
        else:
            guv = assign_uv_case1(s.tpose_garment, template, tree, k=config.case1_k)
        guvs.append(guv)
        maps.append(encode_tpose(s.tpose_garment, guv, template, config.resolution))
    return samples, train, maps, guvs


def _cmd_train_paramnet(args, config, seed):
    template = _template(config)
    _, train, maps, _ = _dataset_maps(config, template, args.data)
    cfg = config.paramnet
    cfg.seed = seed
    model = shapespace.train_paramnet(maps, cfg, latent_n=config.latent_n,
                                      base=config.paramnet_base,
                                      include_mask=config.encoder_sees_mask)
    shapespace.save_paramnet(model, args.out)
    log = model.train_log
    print(f"trained on {len(maps)} maps: loss {log[0]['total']:.4f} -> {log[-1]['total']:.4f}")
    return {"samples": len(maps), "initial": log[0]["total"], "final": log[-1]["total"]}


def _cmd_train_animnet(args, config, seed):
    template = _template(config)
    samples, train, maps, guvs = _dataset_maps(config, template, args.data)
    pose_samples = []
    for s, guv in zip(train, guvs):
        ps, _ = animator.make_pose_sample(s.tpose_garment, s.posed_garment, guv,
                                          template, s.body_state, config.resolution)
        pose_samples.append(ps)
    cfg = config.animnet
    cfg.seed = seed
    model = animator.train_animnet(pose_samples, cfg, latent=config.animnet_latent,
                                   base=config.animnet_base,
                                   include_mask=config.encoder_sees_mask)
    animator.save_animnet(model, args.out)
    log = model.train_log
    print(f"trained on {len(pose_samples)} pose samples: loss {log[0]:.4f} -> {log[-1]:.4f}")
    return {"samples": len(pose_samples), "initial": log[0], "final": log[-1]}


def _cmd_train_infernet(args, config, seed):
    template = _template(config)
    paramnet = shapespace.load_paramnet(args.paramnet)
    samples, train, maps, guvs = _dataset_maps(config, template, args.data)
    pairs = []
    for s, m in zip(train, maps):
        z = shapespace.encode(paramnet, m)
        posed_body = pose_body(template, s.body_state)
        pairs.append((posed_body, s.posed_garment, z, (0.0, 0.0, 0.0)))
    cfg = config.infernet
    cfg.seed = seed
    model = infermod.train_infernet(pairs, cfg, latent_n=paramnet.latent_n,
                                    n_points=config.infer_points,
                                    widths=config.infer_widths,
                                    fuse_hidden=config.infer_fuse_hidden)
    infermod.save_infernet(model, args.out)
    log = model.train_log
    print(f"trained on {len(pairs)} pairs: loss {log[0]:.4f} -> {log[-1]:.4f}")
    return {"pairs": len(pairs), "initial": log[0], "final": log[-1]}


def _cmd_fit_pca(args, config, seed):
    template = _template(config)
    model = shapespace.load_paramnet(args.paramnet)
    _, train, maps, _ = _dataset_maps(config, template, args.data)
    latents = [shapespace.encode(model, m) for m in maps]
    n = args.n if args.n is not None else min(config.pca_n, len(latents) - 1)
    model.pca = shapespace.fit_pca(latents, n)
    shapespace.save_paramnet(model, args.out)
    print(f"fitted {n}-dim subspace over {len(latents)} latents; "
          f"sigma: {np.round(model.pca.sigma, 4).tolist()}")
    return {"n": n, "sigma": model.pca.sigma.tolist()}


def _cmd_interpolate(args, config, seed):
    template = _template(config)
    model = shapespace.load_paramnet(args.paramnet)
    pca = _require_pca(model)
    a = shapespace.ShapeParams(_parse_vector(args.a, pca.n_dims, "--a"))
    b = shapespace.ShapeParams(_parse_vector(args.b, pca.n_dims, "--b"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = []
    for i in range(args.steps):
        t = i / max(args.steps - 1, 1)
        s = shapespace.interpolate(a, b, t)
        m, _ = shapespace.decode(model, shapespace.from_params(pca, s))
        mesh, _ = decode_template_free(m, template)
        save_obj(mesh, out / f"step_{i:03d}.obj")
        counts.append(m.mask_texels())
    print(f"wrote {args.steps} interpolation frames to {args.out}; mask texels {counts}")
    return {"steps": args.steps, "mask_texels": counts}


def _cmd_variation(args, config, seed):
    template = _template(config)
    model = shapespace.load_paramnet(args.paramnet)
    pca = _require_pca(model)
    s = shapespace.sample_variation(pca, args.dim, args.c)
    m, _ = shapespace.decode(model, shapespace.from_params(pca, s))
    mesh, _ = decode_template_free(m, template)
    save_obj(mesh, args.out)
    if args.gltf:
        from .gltf import save_gltf
        save_gltf(mesh, Path(args.out).with_suffix(".gltf"))
    print(f"dim {args.dim} at {args.c:+.2f} sigma: {m.mask_texels()} mask texels -> {args.out}")
    return {"mask_texels": m.mask_texels()}


def _cmd_animate(args, config, seed):
    template = _template(config)
    paramnet = shapespace.load_paramnet(args.paramnet)
    pca = _require_pca(paramnet)
    animnet = animator.load_animnet(args.animnet)
    s = shapespace.ShapeParams(_parse_vector(args.s, pca.n_dims, "--s"))
    t_map, _ = shapespace.decode(paramnet, shapespace.from_params(pca, s))
    states = _load_states(args.poses, template)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = []
    t0 = time.time()
    for i, state in enumerate(states):
        frame = animator.animate(animnet, template, state, t_map, y0=config.y0,
                                 margin=config.collision_margin)
        save_obj(frame.mesh, out / f"frame_{i:03d}.obj")
        if args.gltf:
            from .gltf import save_gltf
            save_gltf(frame.mesh, out / f"frame_{i:03d}.gltf")
        report.append({"frame": i, "collision_iterations": frame.collision_iterations,
                       "violations": frame.collision_violations})
    dt = time.time() - t0
    with open(out / "report.json", "w") as fh:
        json.dump({"frames": report, "wall_time_s": dt}, fh, indent=2, sort_keys=True)
    print(f"wrote {len(states)} frames to {args.out} in {dt:.1f} s")
    return {"frames": len(states), "violations": sum(r["violations"] for r in report)}


def _cmd_infer(args, config, seed):
    paramnet = shapespace.load_paramnet(args.paramnet)
    pca = _require_pca(paramnet)
    model = infermod.load_infernet(args.infernet)
    garment = load_obj(args.garment)
    human = load_obj(args.human)
    result = infermod.infer_shape(model, garment, human, pca)
    payload = {"s": result.s.s.tolist(), "z_norm": float(np.linalg.norm(result.z)),
               "residual": result.residual, "residual_flag": bool(result.residual_flag)}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return payload


def _cmd_edit_animate(args, config, seed):
    template = _template(config)
    paramnet = shapespace.load_paramnet(args.paramnet)
    pca = _require_pca(paramnet)
    animnet = animator.load_animnet(args.animnet)
    model = infermod.load_infernet(args.infernet)
    garment = load_obj(args.garment)
    human = load_obj(args.human)
    result = infermod.infer_shape(model, garment, human, pca)
    edits = []
    for e in args.edit:
        dim, _, value = e.partition("=")
        edits.append((int(dim), float(value)))
    states = _load_states(args.poses, template)
    frames = infermod.edit_and_animate(result, edits, animnet, states, paramnet, pca, template)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_obj(frame.mesh, out / f"frame_{i:03d}.obj")
    print(f"inferred s={np.round(result.s.s, 3).tolist()}, wrote {len(frames)} frames")
    return {"frames": len(frames), "residual_flag": bool(result.residual_flag)}


def _cmd_eval(args, config, seed):
    pred = load_obj(args.pred)
    gt = load_obj(args.gt)
    err = vertex_to_vertex_error(pred, gt)
    print(f"{err:.2f} mm")
    return {"error_mm": err}


def _cmd_serve(args, config, seed):
    import uvicorn
    from .service import ApiSession, create_app

    model_dir = args.model_dir or config.model_dir
    session = ApiSession.load(model_dir, config)
    app = create_app(session)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="info")
    return {}


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "train-paramnet": _cmd_train_paramnet,
    "train-animnet": _cmd_train_animnet,
    "train-infernet": _cmd_train_infernet,
    "fit-pca": _cmd_fit_pca,
    "interpolate": _cmd_interpolate,
    "variation": _cmd_variation,
    "animate": _cmd_animate,
    "infer": _cmd_infer,
    "edit-animate": _cmd_edit_animate,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    if not args.command:
        parser.print_usage()
        return 1
    try:
        config = load_config(args.config) if args.config else ProjectConfig()
    except (ConfigError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    t0 = time.time()
    try:
        metrics = _COMMANDS[args.command](args, config, args.seed)
    except (UserError, ConfigError, MeshError, ObjParseError, ValueError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 2
    _log_run(config, args.command, args.seed, metrics, time.time() - t0)
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
