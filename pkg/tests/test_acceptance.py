"""Acceptance gate: every criterion runs at its stated tolerance and prints
one PASS line (pytest reports FAILED otherwise). Run alone with:

    pytest tests/test_acceptance.py -s -v
"""
import time

import numpy as np
import pytest

from garmentspace import nn
from garmentspace.aabb import (AABBTree, exhaustive_ray_correspondence,
                               nearest_ray_correspondence)
from garmentspace.animator import animnet_specs, resolve_collisions, animate
from garmentspace.body import BodyState, pose_body
from garmentspace.garments import (Category, GarmentSpec, generate_garment, load_dataset,
                                   n_test_samples)
from garmentspace.maps import bidistance_transform, edt_squared, edt_squared_bruteforce, recover_mask
from garmentspace.mesh import vertex_to_vertex_error, vertex_normals
from garmentspace.shapespace import (ShapeParams, ShapeSpaceError, decode, encode,
                                     fit_pca, from_params, paramnet_specs,
                                     sample_variation, to_params)
from garmentspace.uvcodec import (assign_uv_case1, assign_uv_case2, build_coupled,
                                  decode_posed, decode_template_carried,
                                  decode_vertex_values, encode_tpose, texel_footprint,
                                  vertex_values_posed, vertex_values_tpose)
from garmentspace.infer import infer_shape, infernet_specs, sample_points


def _ok(name, detail):
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


def test_codec_exactness():
    t0 = time.monotonic()
    rng = np.random.default_rng(100)
    mismatched = 0
    for _ in range(1000):
        mask = rng.random((64, 64)) < rng.uniform(0.05, 0.95)
        t = bidistance_transform(mask, 16)
        mismatched += int((recover_mask(t) != mask).sum())
    assert mismatched == 0
    for _ in range(50):
        mask = rng.random((32, 32)) < rng.uniform(0.2, 0.8)
        assert np.array_equal(edt_squared(mask), edt_squared_bruteforce(mask))
        assert np.array_equal(edt_squared(~mask), edt_squared_bruteforce(~mask))
    dt = time.monotonic() - t0
    assert dt < 60
    _ok("codec exactness", f"1000 mask round trips exact, 50 brute-force matches, {dt:.1f}s")


def test_correspondence_oracle(template, body_tree):
    t0 = time.monotonic()
    body = template.mesh
    vn = vertex_normals(body)
    g1 = generate_garment(GarmentSpec(Category.UPPER, sleeve_or_leg_length=0.8,
                                      opening_gap=0.2, looseness=0.025), template)
    g2 = generate_garment(GarmentSpec(Category.PANTS, sleeve_or_leg_length=0.9,
                                      looseness=0.018), template)
    allv = np.concatenate([g1.vertices, g2.vertices])
    rng = np.random.default_rng(42)
    queries = allv[rng.choice(len(allv), 100, replace=False)]
    for q in queries:
        a = nearest_ray_correspondence(q, body, body_tree, k=16)
        b = exhaustive_ray_correspondence(q, body, vn)
        assert a.anchor.face_index == b.anchor.face_index
        assert np.abs(a.anchor.weights - b.anchor.weights).max() < 1e-9
        assert abs(a.normal_distance - b.normal_distance) < 1e-9
    dt = time.monotonic() - t0
    assert dt < 60
    _ok("correspondence oracle", f"100/100 identical anchors, {dt:.1f}s")


def test_geometric_round_trips(template, body_tree, small_dataset):
    t0 = time.monotonic()
    # per-vertex route on procedural garments, both cases
    upper_spec = GarmentSpec(Category.UPPER, sleeve_or_leg_length=0.7, looseness=0.02)
    upper = generate_garment(upper_spec, template)
    guv1 = assign_uv_case1(upper, template, body_tree)
    dec1 = decode_vertex_values(vertex_values_tpose(upper, guv1), guv1, template)
    err1 = vertex_to_vertex_error(upper, dec1)
    skirt = generate_garment(GarmentSpec(Category.SKIRT, skirt_length=0.3,
                                         looseness=0.03), template)
    guv2 = assign_uv_case2(skirt)
    dec2 = decode_vertex_values(vertex_values_tpose(skirt, guv2), guv2, None)
    err2 = vertex_to_vertex_error(skirt, dec2)
    assert err1 < 1e-3 and err2 < 1e-3  # millimeters

    # grid route at R=64 on 10 dataset samples (T-pose and posed)
    out, _ = small_dataset
    samples = load_dataset(out / "manifest.json")[:10]
    worst_ratio = 0.0
    for s in samples:
        guv = assign_uv_case2(s.tpose_garment)
        fp_mm = texel_footprint(guv, s.tpose_garment, 64) * 1000
        m = encode_tpose(s.tpose_garment, guv, None, 64)
        dec = decode_template_carried(m, guv, None)
        worst_ratio = max(worst_ratio, vertex_to_vertex_error(s.tpose_garment, dec) / (2 * fp_mm))
        posed_body = pose_body(template, s.body_state)
        coupled = build_coupled(s.tpose_garment, s.posed_garment, guv, None,
                                posed_body, 64)
        dec_p = decode_posed(coupled.a_map, guv, posed_body)
        worst_ratio = max(worst_ratio,
                          vertex_to_vertex_error(s.posed_garment, dec_p) / (2 * fp_mm))
    assert worst_ratio < 1.0
    dt = time.monotonic() - t0
    assert dt < 120
    _ok("geometric round trips",
        f"per-vertex {max(err1, err2):.2e} mm, grid worst {worst_ratio:.2f} of bound, {dt:.1f}s")


def test_gradient_checks():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    worst = 0.0
    layer_cases = [
        ([nn.Dense(5, 4)], (5,)),
        ([nn.Conv2D(2, 3, 3, 1)], (2, 5, 5)),
        ([nn.Conv2D(2, 3, 3, 2)], (2, 6, 6)),
        ([nn.UpsampleNearest(2)], (2, 3, 3)),
        ([nn.ReLU()], (7,)),
        ([nn.Sigmoid()], (7,)),
        ([nn.Flatten()], (2, 3, 3)),
        ([nn.Reshape((3, 4))], (12,)),
        ([nn.PointMLP((3, 6, 8))], (10, 3)),
        ([nn.PointMLP((3, 6, 8)), nn.MaxPoolPoints()], (10, 3)),
    ]
    for spec, shape in layer_cases:
        params = nn.init_params(spec, 1)
        x = np.random.default_rng(2).normal(0, 1, shape) + 0.05
        worst = max(worst, nn.gradient_check(spec, params, x, seed=3))

    # the three networks at toy size
    enc, dmap, dmask = paramnet_specs(8, 3, 4, base=4)
    for spec in (enc, dmap, dmask):
        params = nn.init_params(spec, 4)
        shape = (4,) if isinstance(spec[0], nn.Dense) else (4, 8, 8)
        x = np.random.default_rng(5).normal(0, 1, shape) + 0.05
        worst = max(worst, nn.gradient_check(spec, params, x, seed=6))
    enc_a, dec_a = animnet_specs(8, 3, latent=6, base=4)
    for spec in (enc_a, dec_a):
        params = nn.init_params(spec, 7)
        shape = (6,) if isinstance(spec[0], nn.Dense) else (7, 8, 8)
        x = np.random.default_rng(8).normal(0, 1, shape) + 0.05
        worst = max(worst, nn.gradient_check(spec, params, x, seed=9))
    branch, fuse = infernet_specs(4, widths=(3, 4, 6), fuse_hidden=8)
    for spec, shape in ((branch, (5, 3)), (fuse, (12,))):
        params = nn.init_params(spec, 10)
        x = np.random.default_rng(11).normal(0, 1, shape) + 0.05
        worst = max(worst, nn.gradient_check(spec, params, x, seed=12))
    assert worst < 1e-4
    dt = time.monotonic() - t0
    assert dt < 120
    _ok("gradient checks", f"max relative error {worst:.2e}, {dt:.1f}s")


def test_training_sanity(trained_paramnet, trained_animnet, trained_infernet,
                         fitted_pca, infer_pairs, timings):
    log_p = trained_paramnet.train_log
    assert len(log_p) <= 200
    ratio_p = log_p[-1]["total"] / log_p[0]["total"]
    assert ratio_p < 0.25

    log_a = trained_animnet.train_log
    ratio_a = log_a[-1] / log_a[0]
    assert ratio_a < 0.3

    log_i = trained_infernet.train_log
    ratio_i = log_i[-1] / log_i[0]
    assert ratio_i < 0.3

    bank = trained_infernet.latent_bank
    hits = 0
    for human, garment, z_t, root in infer_pairs:
        r = infer_shape(trained_infernet, garment, human, fitted_pca, root)
        hits += np.allclose(bank[np.abs(bank - r.z).mean(axis=1).argmin()], z_t)
    retrieval = hits / len(infer_pairs)
    assert retrieval >= 0.95

    total = sum(timings.values())
    assert total < 30 * 60
    _ok("training sanity",
        f"paramnet {ratio_p:.3f} (<0.25), animnet {ratio_a:.3f} (<0.3), "
        f"infernet {ratio_i:.3f} (<0.3), retrieval {retrieval:.1%}, "
        f"training wall time {total:.0f}s")


def test_pca_properties(skirt_latents):
    Z = np.stack(skirt_latents)
    errs = []
    for n in range(0, len(Z)):
        pca = fit_pca(Z, n)
        recon = np.stack([from_params(pca, to_params(pca, z)) for z in Z])
        errs.append(float(np.linalg.norm(recon - Z)))
    assert all(errs[i + 1] <= errs[i] + 1e-9 for i in range(len(errs) - 1))
    pca_full = fit_pca(Z, len(Z) - 1)
    recon = np.stack([from_params(pca_full, to_params(pca_full, z)) for z in Z])
    assert np.abs(recon - Z).max() < 1e-6
    rng = np.random.default_rng(1)
    pca = fit_pca(Z, 4)
    s = rng.normal(size=4)
    z = from_params(pca, ShapeParams(s))
    assert np.abs(from_params(pca, to_params(pca, z)) - z).max() < 1e-9
    _ok("pca properties",
        f"monotone over n, full-rank exact ({np.abs(recon - Z).max():.1e}), span round trip")


def test_animation_safety(template, trained_animnet, trained_paramnet, fitted_pca,
                          bank):
    rng = np.random.default_rng(77)
    z = from_params(fitted_pca, ShapeParams(np.zeros(fitted_pca.n_dims)))
    t_map, _ = decode(trained_paramnet, z)
    J = template.skeleton.n_joints
    violations = 0
    for i in range(12):
        theta = bank[i][1] + rng.uniform(-0.1, 0.1, (J, 3))
        state = BodyState(np.ones((J, 2)), theta)
        frame = animate(trained_animnet, template, state, t_map, margin=0.003)
        violations += frame.collision_violations
    assert violations == 0
    _ok("animation safety", "12 frames, zero violations at 3 mm")


def test_paper_convention_checks(small_dataset, fitted_pca, trained_paramnet,
                                 skirt_set):
    # exact 95/5 split
    assert n_test_samples(100) == 5
    assert n_test_samples(20) == 1
    out, manifest = small_dataset
    assert manifest["n_train"] == 19 and manifest["n_test"] == 1
    splits = [e["split"] for e in manifest["samples"]]
    assert all(s == "TRAIN" for s in splits[:19]) and splits[19] == "TEST"

    # +-1 sigma variation guard
    with pytest.raises(ShapeSpaceError):
        sample_variation(fitted_pca, 0, 1.0001)
    with pytest.raises(ShapeSpaceError):
        sample_variation(fitted_pca, 0, -1.5)
    sample_variation(fitted_pca, 0, 1.0)

    # masked-L1 invariance to unmasked target texels (shape and posed losses)
    rng = np.random.default_rng(5)
    m = skirt_set[0][3]
    pred = rng.normal(0.5, 0.1, m.channels.shape)
    target = m.channels.copy()
    mask = m.mask.astype(float)
    loss1, _ = nn.l1_masked_loss(pred, target, mask)
    hostile = target.copy()
    hostile[:, ~m.mask] += rng.normal(0, 100, (3, int((~m.mask).sum())))
    loss2, _ = nn.l1_masked_loss(pred, hostile, mask)
    assert loss1 == loss2
    _ok("paper-convention checks",
        "95/5 exact, 1-sigma guard enforced, masked-L1 outside-mask delta = 0")
