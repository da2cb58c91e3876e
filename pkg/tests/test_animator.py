import numpy as np
import pytest

from garmentspace import nn
from garmentspace.aabb import AABBTree, signed_distance_batch
from garmentspace.animator import (AnimNetModel, PoseSample, animate, load_animnet,
                                   predict_posed_map, resolve_collisions, save_animnet,
                                   train_animnet, _model_input)
from garmentspace.body import BodyState, pose_body
from garmentspace.maps import CaseTag, UVMap
from garmentspace.mesh import MeshError, TriMesh, vertex_to_vertex_error
from garmentspace.primitives import icosphere
from garmentspace.uvcodec import decode_posed, texel_footprint


def test_training_converges(trained_animnet):
    log = trained_animnet.train_log
    assert len(log) == 300
    assert log[-1] < 0.3 * log[0]


def test_memorization_single_sample(anim_set):
    cfg = nn.TrainConfig(epochs=250, lr=0.05, batch_size=4, seed=3, lr_final_frac=0.005)
    sample = anim_set[0]["sample"]
    model = train_animnet([sample] * 20, cfg, latent=32, base=8)
    pred = predict_posed_map(model, sample.t_map, sample.normal_map)
    mask = sample.a_map_gt.mask
    err = np.abs(pred.channels[:, mask] - sample.a_map_gt.channels[:, mask]).mean()
    assert err < 1e-2


def test_mask_mismatch_rejected_at_construction(anim_set):
    s = anim_set[0]["sample"]
    bad_mask = s.t_map.mask.copy()
    bad_mask[0, 0] = ~bad_mask[0, 0]
    bad = UVMap(s.a_map_gt.resolution, s.a_map_gt.channels.copy(), bad_mask,
                s.a_map_gt.case_tag)
    with pytest.raises(MeshError):
        PoseSample(s.t_map, s.normal_map, bad)


def test_loss_invariant_outside_mask(anim_set, trained_animnet):
    """Perturbing unmasked target texels changes the training loss by 0."""
    s = anim_set[0]["sample"]
    x = _model_input(trained_animnet, s.t_map, s.normal_map)
    y, _ = nn.forward(trained_animnet.enc_spec, trained_animnet.enc_params, x)
    y, _ = nn.forward(trained_animnet.dec_spec, trained_animnet.dec_params, y)
    mask = s.a_map_gt.mask.astype(float)
    target = s.a_map_gt.channels
    loss1, _ = nn.l1_masked_loss(y, target, mask)
    hostile = target.copy()
    hostile[:, ~s.a_map_gt.mask] += 123.0
    loss2, _ = nn.l1_masked_loss(y, hostile, mask)
    assert loss1 == loss2


def test_animate_identity_pose_close_to_tpose(template, trained_animnet, anim_set,
                                              skirt_set):
    from garmentspace.body import identity_state
    a = anim_set[0]
    si = a["skirt_index"]
    spec, g, guv, t_map = skirt_set[si]
    st = identity_state(template.skeleton.n_joints)
    frame = animate(trained_animnet, template, st, t_map, guv=guv)
    # training residual in world units: loss is mean |value| error, values are
    # position+0.5, so world error ~ loss (meters)
    residual_m = trained_animnet.train_log[-1]
    err_mm = vertex_to_vertex_error(frame.mesh, g)
    assert err_mm < 3 * residual_m * 1000 + 2 * texel_footprint(guv, g, 32) * 1000


def test_animate_held_out_jitter(template, trained_animnet, anim_set, skirt_set):
    """Jittered poses (+-0.1 rad) stay collision-free and within 2x the
    training-pose prediction error (plus a texel-quantization floor)."""
    from garmentspace.garments import drape_pose

    rng = np.random.default_rng(99)
    a = anim_set[0]
    spec, g, guv, t_map = skirt_set[a["skirt_index"]]
    st = a["state"]
    frame_train = animate(trained_animnet, template, st, a["sample"].t_map, guv=guv)
    err_train = vertex_to_vertex_error(frame_train.mesh, a["posed"])

    jit = BodyState(st.beta.copy(), st.theta + rng.uniform(-0.1, 0.1, st.theta.shape))
    truth_jit = drape_pose(g, template, jit, seed=0)
    frame_jit = animate(trained_animnet, template, jit, a["sample"].t_map, guv=guv)
    assert frame_jit.collision_violations == 0
    err_jit = vertex_to_vertex_error(frame_jit.mesh, truth_jit)
    floor = 2 * texel_footprint(guv, g, trained_animnet.resolution) * 1000
    assert err_jit < 2 * err_train + floor


def test_animate_deterministic(template, trained_animnet, trained_paramnet,
                               fitted_pca, skirt_set):
    from garmentspace.shapespace import ShapeParams, decode, from_params
    from garmentspace.body import identity_state
    z = from_params(fitted_pca, ShapeParams(np.zeros(fitted_pca.n_dims)))
    t_map, _ = decode(trained_paramnet, z)
    st = identity_state(template.skeleton.n_joints)
    f1 = animate(trained_animnet, template, st, t_map)
    f2 = animate(trained_animnet, template, st, t_map)
    assert np.array_equal(f1.mesh.vertices, f2.mesh.vertices)
    assert np.array_equal(f1.mesh.faces, f2.mesh.faces)


def test_predicted_mask_is_source_mask(trained_animnet, anim_set):
    s = anim_set[3]["sample"]
    pred = predict_posed_map(trained_animnet, s.t_map, s.normal_map)
    assert np.array_equal(pred.mask, s.t_map.mask)


def test_resolve_collisions_noop():
    body = icosphere(2, radius=0.3)
    tree = AABBTree(body)
    garment = icosphere(1, radius=0.5)
    out = resolve_collisions(garment, body, tree, margin=0.003)
    assert out.violations == 0
    assert np.array_equal(out.mesh.vertices, garment.vertices)


def test_resolve_collisions_pushes_out():
    body = icosphere(2, radius=0.3)
    tree = AABBTree(body)
    garment = icosphere(1, radius=0.5)
    v = garment.vertices.copy()
    v[7] = v[7] / np.linalg.norm(v[7]) * 0.29  # 1 cm inside the sphere
    pushed = resolve_collisions(garment.with_vertices(v), body, tree, margin=0.002)
    assert pushed.violations == 0
    sd = signed_distance_batch(pushed.mesh.vertices[[7]], body, tree)
    assert sd[0] >= 0.002 - 1e-6


def test_resolve_collisions_on_draped_samples(template, anim_set):
    for a in anim_set[:10]:
        posed_body = a["posed_body"]
        tree = AABBTree(posed_body)
        out = resolve_collisions(a["posed"], posed_body, tree, margin=0.003)
        sd = signed_distance_batch(out.mesh.vertices, posed_body, tree)
        assert (sd >= 0.003 - 1e-6).all()


def test_save_load_round_trip(tmp_path, trained_animnet, anim_set):
    path = tmp_path / "animnet.uvck"
    save_animnet(trained_animnet, path)
    again = load_animnet(path)
    s = anim_set[0]["sample"]
    p1 = predict_posed_map(trained_animnet, s.t_map, s.normal_map)
    p2 = predict_posed_map(again, s.t_map, s.normal_map)
    assert np.abs(p1.channels - p2.channels).max() < 1e-4  # float32 storage


def test_train_without_mask_channel(anim_set):
    cfg = nn.TrainConfig(epochs=2, lr=0.05, batch_size=4, seed=0)
    model = train_animnet([a["sample"] for a in anim_set], cfg, latent=16, base=4,
                          include_mask=False)
    t_ch = anim_set[0]["sample"].t_map.n_channels
    assert model.enc_spec[0].c_in == t_ch + 3
    pred = predict_posed_map(model, anim_set[0]["sample"].t_map,
                             anim_set[0]["sample"].normal_map)
    assert pred.channels.shape[0] == 3
