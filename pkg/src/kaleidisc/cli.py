"""Command-line entry point.

Subcommands: compose, render, loss, metrics, attack, verify-eq23,
symmetry-check. Exit codes: 0 success, 2 validation error, 3 runtime or
victim error. Machine-readable output is line-oriented ``key=value``.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from .bridge_client import BridgeVictim
from .config import parse_config, parse_kv_lines
from .disc import DiscImage, DiscSpec, compose_disc, symmetry_score
from .errors import ExecutionError, InvalidConfigError, ValidationError
from .formats import (emit_heatmap, load_image, load_mask, load_poses,
                      read_pmap, save_image, save_mask, write_pmap)
from .loss import Observation, poc_loss, verify_projection_correspondence
from .metrics import compute_report
from .pose import Intrinsics, look_at_pose
from .scene import Occluder, SceneConfig, render_view, sample_viewpoint
from .victim import BuiltinVictim


def _cmd_compose(args):
    seg = load_image(args.segment)
    spec = DiscSpec(args.segments, seg.shape[0])
    disc = compose_disc(seg, spec)
    save_image(args.out, disc.pixels)
    if args.symmetry_check:
        print(f"symmetry_score={symmetry_score(disc, spec.segments):.17g}")
    return 0


def _cmd_symmetry_check(args):
    disc = DiscImage.from_array(load_image(args.disc))
    print(f"symmetry_score={symmetry_score(disc, args.segments):.17g}")
    return 0


_SCENE_KEYS = {"disc_texture", "disc_radius_m", "background", "image_size",
               "focal_px", "occluder"}


def _load_scene(path):
    pairs = parse_kv_lines(Path(path).read_text())
    unknown = set(pairs) - _SCENE_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown key {sorted(unknown)[0]!r}")
    if "disc_texture" not in pairs:
        raise InvalidConfigError("missing required key 'disc_texture'")
    disc = DiscImage.from_array(load_image(pairs["disc_texture"]))
    radius = float(pairs.get("disc_radius_m", "1.0"))
    background = tuple(float(x) for x in pairs.get("background", "0.35,0.35,0.35").split(","))
    occluder = None
    if "occluder" in pairs and pairs["occluder"] != "none":
        groups = pairs["occluder"].split(";")
        if len(groups) != 3:
            raise InvalidConfigError("occluder must be 'cx,cy,cz;ex,ey,ez;r,g,b'")
        c, e, a = (tuple(float(x) for x in g.split(",")) for g in groups)
        occluder = Occluder(c, e, a)
    scene = SceneConfig(disc, radius, background, occluder)
    size = int(pairs.get("image_size", "128"))
    focal = float(pairs.get("focal_px", str(size * 1.1)))
    return scene, Intrinsics.centered(size, focal)


def _cmd_render(args):
    scene, intr = _load_scene(args.scene)
    poses = load_poses(args.poses)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        view = render_view(scene, pose, intr)
        save_image(out / f"view_{i:03d}.png", view.image)
        write_pmap(out / f"view_{i:03d}.pmap", view.pointmap)
        save_mask(out / f"view_{i:03d}_mask.png", view.disc_mask)
        print(f"rendered view_{i:03d}")
    return 0


def _cmd_loss(args):
    pm_a = read_pmap(args.pmap_a)
    pm_b = read_pmap(args.pmap_b)
    mask_a = load_mask(args.mask_a)
    mask_b = load_mask(args.mask_b)
    center_a = np.array(args.center_a) if args.center_a else None
    center_b = np.array(args.center_b) if args.center_b else None
    value = poc_loss(Observation(pm_a, mask_a, center_a),
                     Observation(pm_b, mask_b, center_b))
    c = value.per_channel
    print(f"poc_loss {value.total:.17g} c1 {c[0]:.17g} c2 {c[1]:.17g} "
          f"c3 {c[2]:.17g} flags {value.flags_str}")
    if args.heatmap_dir:
        hd = Path(args.heatmap_dir)
        hd.mkdir(parents=True, exist_ok=True)
        for i in range(3):
            emit_heatmap(pm_a.coords[:, :, i], mask_a & pm_a.valid,
                         hd / f"channel_{i + 1}_a.png")
            emit_heatmap(pm_b.coords[:, :, i], mask_b & pm_b.valid,
                         hd / f"channel_{i + 1}_b.png")
    return 0


def _cmd_metrics(args):
    pred = load_poses(args.predicted)
    gt = load_poses(args.ground_truth)
    report = compute_report(pred, gt)
    rows = ([("pairs", str(report.pair_count))]
            + [(f"RRA@{g}", f"{report.rra[g]:.4f}") for g in sorted(report.rra)]
            + [(f"RTA@{g}", f"{report.rta[g]:.4f}") for g in sorted(report.rta)]
            + [("mAA(30)", f"{report.maa30:.4f}"), ("RRS", f"{report.rrs:.4f}")])
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    for line in report.lines():
        print(line)
    return 0


def _cmd_attack(args):
    cfg = parse_config(Path(args.config).read_text())
    if args.segment_height:
        cfg = attack_mod.AttackConfig(**{**cfg.__dict__, "segment_height": args.segment_height})
    rho = 2 * cfg.segment_height
    texture = np.zeros((2 * rho, 2 * rho, 3))
    scene = SceneConfig(DiscImage.from_array(texture), cfg.disc_radius_m)
    if cfg.victim == "bridge":
        if not args.exchange_dir:
            raise InvalidConfigError("victim=bridge requires --exchange-dir")
        victim = BridgeVictim(args.exchange_dir)
    else:
        victim = BuiltinVictim()
    seg, trace = attack_mod.run_attack(cfg, scene, victim, out_dir=args.out_dir)
    losses = trace.losses()
    print(f"iterations={len(trace.records)}")
    print(f"completed={len(losses)}")
    if losses:
        print(f"final_loss={losses[-1]:.17g}")
    return 0


def _cmd_verify_eq23(args):
    rng = np.random.default_rng(args.seed)
    rho = args.size
    texture = np.full((2 * rho, 2 * rho, 3), 0.5)
    scene = SceneConfig(DiscImage.from_array(texture), 1.0)
    intr = Intrinsics.centered(args.size, args.size * 1.1)
    pairs = []
    for _ in range(args.pairs):
        da, pa, ya = sample_viewpoint(rng)
        db, pb, yb = sample_viewpoint(rng)
        pairs.append((look_at_pose(da, pa, ya), look_at_pose(db, pb, yb)))
    report = verify_projection_correspondence(pairs, scene, intr)
    print(f"pairs={report.pairs_total}")
    for i, ch in enumerate(report.channels, start=1):
        print(f"channel_{i}_pearson={ch.pearson:.17g}")
        print(f"channel_{i}_sign_agreement={ch.sign_agreement:.17g}")
        print(f"channel_{i}_used={ch.used}")
        print(f"channel_{i}_insufficient={int(ch.insufficient)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kaleidisc",
        description="Radially symmetric background discs vs camera pose estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="tile a segment image into a symmetric disc")
    p.add_argument("--segment", required=True)
    p.add_argument("--segments", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--symmetry-check", action="store_true")
    p.set_defaults(fn=_cmd_compose)

    p = sub.add_parser("symmetry-check", help="score a disc image's N-fold symmetry")
    p.add_argument("--disc", required=True)
    p.add_argument("--segments", type=int, required=True)
    p.set_defaults(fn=_cmd_symmetry_check)

    p = sub.add_parser("render", help="render image/pointmap/mask triples")
    p.add_argument("--scene", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("loss", help="consistency loss between two pointmaps")
    p.add_argument("--pmap-a", required=True)
    p.add_argument("--pmap-b", required=True)
    p.add_argument("--mask-a", required=True)
    p.add_argument("--mask-b", required=True)
    p.add_argument("--center-a", type=float, nargs=2)
    p.add_argument("--center-b", type=float, nargs=2)
    p.add_argument("--heatmap-dir")
    p.set_defaults(fn=_cmd_loss)

    p = sub.add_parser("metrics", help="relative-pose metrics vs ground truth")
    p.add_argument("--predicted", required=True)
    p.add_argument("--ground-truth", required=True)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("attack", help="optimize a segment against a victim")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--exchange-dir")
    p.add_argument("--segment-height", type=int)
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("verify-eq23",
                       help="correlate pointmap flow cosines with projected "
                            "orientation cosines over random pose pairs")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_verify_eq23)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExecutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
