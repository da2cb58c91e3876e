#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthesize a garment dataset, train the
shape space, the animation regressor and the mesh-inference net, fit the PCA
subspace, and export a variation sweep plus an animated sequence.

Everything runs through the CLI so the run is reproducible from the shell:

    python3 scripts/run_pipeline.py --out runs/skirts --count 30 --seed 7
"""
import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from garmentspace.cli import run_command
from garmentspace.config import ProjectConfig, save_config
from garmentspace.nn import TrainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/skirts")
    ap.add_argument("--count", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--category", default="skirt")
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "models").mkdir(exist_ok=True)
    config = ProjectConfig(
        resolution=args.resolution, latent_n=32, pca_n=3,
        dataset_dir=str(root / "data"), model_dir=str(root / "models"),
        runs_log=str(root / "runs.log"),
        paramnet=TrainConfig(epochs=args.epochs, lr=0.05, batch_size=4),
        animnet=TrainConfig(epochs=args.epochs, lr=0.05, batch_size=4),
        infernet=TrainConfig(epochs=2 * args.epochs, lr=0.04, batch_size=4,
                             lr_final_frac=0.002),
    )
    cfg = root / "config.json"
    save_config(config, cfg)
    base = ["--config", str(cfg), "--seed", str(args.seed)]
    pn = str(root / "models/paramnet.uvck")
    an = str(root / "models/animnet.uvck")
    inn = str(root / "models/infernet.uvck")

    steps = [
        ["gen-data", "--count", str(args.count), "--out", str(root / "data"),
         "--category", args.category],
        ["train-paramnet", "--data", str(root / "data"), "--out", pn],
        ["fit-pca", "--paramnet", pn, "--data", str(root / "data"), "--out", pn],
        ["train-animnet", "--data", str(root / "data"), "--out", an],
        ["train-infernet", "--data", str(root / "data"), "--paramnet", pn, "--out", inn],
    ]
    for dim in (0, 1):
        for c in (-1.0, 0.0, 1.0):
            steps.append(["variation", "--paramnet", pn, "--dim", str(dim),
                          "--c", str(c),
                          "--out", str(root / f"variation_d{dim}_{c:+.0f}.obj")])
    poses = root / "poses.json"
    poses.write_text(json.dumps([{"preset": p} for p in
                                 ("t_pose", "arms_down_60", "walking", "sitting")]))
    steps.append(["animate", "--paramnet", pn, "--animnet", an, "--s", "0 0 0",
                  "--poses", str(poses), "--out", str(root / "animation")])

    for step in steps:
        print("::", " ".join(step[:3]))
        code = run_command(base + step)
        if code != 0:
            sys.exit(code)
    print(f"\nartifacts in {root}/ -- serve the studio with:\n"
          f"  garmentspace --config {cfg} serve --model-dir {root / 'models'}")


if __name__ == "__main__":
    main()
