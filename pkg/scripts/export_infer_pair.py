#!/usr/bin/env python3
"""Export a (posed human, posed garment) OBJ pair from a dataset's test
split, ready for the studio's infer panel or the live UI test suite.

    python3 scripts/export_infer_pair.py --run runs/skirts --out runs/skirts
    UI_API_URL=http://127.0.0.1:8000 \
    UI_E2E_GARMENT=runs/skirts/e2e_garment.obj \
    UI_E2E_HUMAN=runs/skirts/e2e_human.obj npm --prefix frontend run test
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from garmentspace.body import build_template, default_body_config, pose_body
from garmentspace.garments import load_dataset
from garmentspace.obj_io import save_obj


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--run", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--index", type=int, default=0, help="which test sample")
    args = ap.parse_args()
    root = Path(args.run)
    out = Path(args.out) if args.out else root
    samples = [s for s in load_dataset(root / "data/manifest.json") if s.split == "TEST"]
    if not samples:
        sys.exit("dataset has no TEST samples")
    s = samples[args.index % len(samples)]
    template = build_template(default_body_config())
    save_obj(pose_body(template, s.body_state), out / "e2e_human.obj")
    save_obj(s.posed_garment, out / "e2e_garment.obj")
    print(f"wrote {out / 'e2e_human.obj'} and {out / 'e2e_garment.obj'}")


if __name__ == "__main__":
    main()
