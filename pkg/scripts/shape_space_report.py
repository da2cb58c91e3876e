#!/usr/bin/env python3
"""Inspect a trained shape space: sigma spectrum, per-sample reconstruction
error, and how the decoded mask area responds to each parameter dimension.

    python3 scripts/shape_space_report.py --run runs/skirts
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from garmentspace.body import build_template, default_body_config
from garmentspace.config import load_config
from garmentspace.garments import Category, load_dataset
from garmentspace.shapespace import (decode, encode, from_params, load_paramnet,
                                     sample_variation)
from garmentspace.uvcodec import assign_uv_case1, assign_uv_case2, encode_tpose
from garmentspace.aabb import AABBTree


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--run", required=True)
    args = ap.parse_args()
    root = Path(args.run)
    config = load_config(root / "config.json")
    model = load_paramnet(root / "models/paramnet.uvck")
    if model.pca is None:
        sys.exit("no PCA block in the checkpoint; run fit-pca first")
    template = build_template(default_body_config())
    tree = AABBTree(template.mesh)

    print(f"latent N={model.latent_n}, pca n={model.pca.n_dims}")
    print("sigma spectrum:", np.round(model.pca.sigma, 4).tolist())

    samples = load_dataset(root / "data/manifest.json")
    errs = []
    for s in samples:
        if s.spec.category == Category.SKIRT:
            guv = assign_uv_case2(s.tpose_garment, config.y0)
            m = encode_tpose(s.tpose_garment, guv, None, config.resolution)
        else:
            guv = assign_uv_case1(s.tpose_garment, template, tree)
            m = encode_tpose(s.tpose_garment, guv, template, config.resolution)
        dec, _ = decode(model, encode(model, m))
        errs.append(np.abs((dec.channels - m.channels) * m.mask).sum() / m.mask.sum()
                    / m.n_channels)
    print(f"masked reconstruction L1 over {len(errs)} samples: "
          f"mean {np.mean(errs):.4f}, worst {np.max(errs):.4f}")

    print("\nmask texels across +-1 sigma sweeps:")
    for dim in range(model.pca.n_dims):
        row = []
        for c in np.linspace(-1, 1, 5):
            m, _ = decode(model, from_params(model.pca, sample_variation(model.pca, dim, float(c))))
            row.append(m.mask_texels())
        print(f"  dim {dim}: {row}")


if __name__ == "__main__":
    main()
