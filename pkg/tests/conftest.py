"""Shared fixtures. The expensive trained models are session-scoped and
reused by both the module tests and the acceptance suite."""
from __future__ import annotations

import time

import numpy as np
import pytest

from garmentspace import nn
from garmentspace.aabb import AABBTree
from garmentspace.body import BodyState, build_template, default_body_config, pose_body
from garmentspace.garments import (Category, GarmentSpec, drape_pose, generate_garment,
                                   pose_bank, sample_state)
from garmentspace.uvcodec import assign_uv_case1, assign_uv_case2, encode_tpose
from garmentspace import animator, infer as infermod, shapespace

ACCEPT_R = 32


@pytest.fixture(scope="session")
def timings():
    """Wall-clock build times of the expensive fixtures, by name."""
    return {}


@pytest.fixture(scope="session")
def template():
    return build_template(default_body_config())


@pytest.fixture(scope="session")
def body_tree(template):
    return AABBTree(template.mesh)


@pytest.fixture(scope="session")
def bank(template):
    return pose_bank(template.skeleton)


@pytest.fixture(scope="session")
def upper_garment(template):
    spec = GarmentSpec(Category.UPPER, sleeve_or_leg_length=0.7, opening_gap=0.0,
                       looseness=0.02)
    return spec, generate_garment(spec, template)


@pytest.fixture(scope="session")
def upper_guv(template, body_tree, upper_garment):
    _, garment = upper_garment
    return assign_uv_case1(garment, template, body_tree)


@pytest.fixture(scope="session")
def skirt_garment(template):
    spec = GarmentSpec(Category.SKIRT, skirt_length=0.3, looseness=0.03)
    return spec, generate_garment(spec, template)


@pytest.fixture(scope="session")
def skirt_guv(skirt_garment):
    return assign_uv_case2(skirt_garment[1])


# ---------------------------------------------------------------------------
# training fixtures (acceptance-scale, R=32)


@pytest.fixture(scope="session")
def skirt_set(template):
    """12 skirts spanning the length/looseness style range, with uv records
    and R=32 maps."""
    rng = np.random.default_rng(11)
    lengths = np.linspace(0.15, 0.42, 12)
    out = []
    for i, L in enumerate(lengths):
        spec = GarmentSpec(Category.SKIRT, skirt_length=float(L),
                           looseness=float(rng.uniform(0.015, 0.05)))
        g = generate_garment(spec, template)
        guv = assign_uv_case2(g)
        out.append((spec, g, guv, encode_tpose(g, guv, None, ACCEPT_R)))
    return out


@pytest.fixture(scope="session")
def trained_paramnet(skirt_set, timings):
    maps = [m for _, _, _, m in skirt_set]
    cfg = nn.TrainConfig(epochs=200, lr=0.05, batch_size=4, seed=0)
    t0 = time.monotonic()
    model = shapespace.train_paramnet(maps, cfg, latent_n=32, base=8)
    timings["paramnet"] = time.monotonic() - t0
    return model


@pytest.fixture(scope="session")
def skirt_latents(trained_paramnet, skirt_set):
    return [shapespace.encode(trained_paramnet, m) for _, _, _, m in skirt_set]


@pytest.fixture(scope="session")
def fitted_pca(trained_paramnet, skirt_latents):
    pca = shapespace.fit_pca(skirt_latents, 3)
    trained_paramnet.pca = pca
    return pca


@pytest.fixture(scope="session")
def anim_set(template, skirt_set, bank):
    """30 pose samples: 3 skirts x 10 poses, with posed bodies and states."""
    out = []
    for gi, si in enumerate((1, 5, 10)):
        spec, g, guv, t_map = skirt_set[si]
        for pj in range(10):
            st = sample_state(template.skeleton, bank, pj,
                              np.random.default_rng([21, gi, pj]))
            posed = drape_pose(g, template, st, seed=gi * 10 + pj)
            ps, pb = animator.make_pose_sample(g, posed, guv, template, st, ACCEPT_R)
            out.append({"skirt_index": si, "state": st, "posed": posed,
                        "posed_body": pb, "sample": ps, "guv": guv})
    return out


@pytest.fixture(scope="session")
def trained_animnet(anim_set, timings):
    cfg = nn.TrainConfig(epochs=300, lr=0.05, batch_size=4, seed=1)
    t0 = time.monotonic()
    model = animator.train_animnet([a["sample"] for a in anim_set], cfg,
                                   latent=64, base=8)
    timings["animnet"] = time.monotonic() - t0
    return model


INFER_SKIRTS = (0, 2, 4, 6, 9, 11)  # well-separated styles


@pytest.fixture(scope="session")
def infer_pairs(template, skirt_set, skirt_latents, bank):
    """30 (posed human, posed garment, target latent, root) tuples:
    6 distinct skirts x 5 poses."""
    pairs = []
    for gi, i in enumerate(INFER_SKIRTS):
        spec, g, guv, _ = skirt_set[i]
        for j in range(5):
            st = sample_state(template.skeleton, bank, gi * 5 + j,
                              np.random.default_rng([7, gi, j]))
            posed = drape_pose(g, template, st, seed=gi * 5 + j)
            pb = pose_body(template, st)
            pairs.append((pb, posed, skirt_latents[i], (0.0, 0.0, 0.0)))
    return pairs


@pytest.fixture(scope="session")
def trained_infernet(infer_pairs, timings):
    cfg = nn.TrainConfig(epochs=400, lr=0.04, batch_size=4, seed=2,
                         lr_final_frac=0.002)
    t0 = time.monotonic()
    model = infermod.train_infernet(infer_pairs, cfg, latent_n=32, n_points=512,
                                    widths=(3, 32, 64, 128), fuse_hidden=128)
    timings["infernet"] = time.monotonic() - t0
    return model


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, template):
    """A 20-sample skirt dataset on disk (minimum count)."""
    from garmentspace.garments import generate_dataset

    out = tmp_path_factory.mktemp("dataset")
    manifest = generate_dataset(20, seed=3, out_dir=out, category=Category.SKIRT,
                                template=template)
    return out, manifest
