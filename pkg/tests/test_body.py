import numpy as np
import pytest

from garmentspace.aabb import AABBTree, nearest_ray_correspondence
from garmentspace.body import (BodyConfigError, BodyState, build_template,
                               default_body_config, body_uv_lookup, identity_state,
                               joint_world_positions, pose_body, rasterize_atlas,
                               render_normal_map, segment_anchor, segment_distal_end,
                               load_body_config, save_body_config, _axis_angle_matrix)
from garmentspace.mesh import BarycentricPoint, vertex_normals


def shell_euler(template, name):
    seg = template.segment_of_vertex
    j = template.segment_index(name)
    vids = np.nonzero(seg == j)[0]
    faces = template.mesh.faces[np.isin(template.mesh.faces[:, 0], vids)]
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    return len(vids) - len(e) + len(faces)


def test_every_shell_is_closed_manifold(template):
    for s in template.config.segments:
        assert shell_euler(template, s.name) == 2


def test_orientation_outward(template):
    tri = template.mesh.triangles()
    vol = np.einsum("fi,fi->f", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6
    assert vol > 0


def test_radius_change_keeps_chart(template):
    cfg = default_body_config()
    for s in cfg.segments:
        if s.name == "torso":
            s.radius *= 2
    fat = build_template(cfg)
    assert np.array_equal(fat.atlas_uv, template.atlas_uv)
    assert np.array_equal(fat.chart_ids, template.chart_ids)
    # torso vertices scale radially
    j = template.segment_index("torso")
    sel = template.segment_of_vertex == j
    assert np.allclose(fat.vertex_radial[sel], 2 * template.vertex_radial[sel])


def test_invalid_tessellation():
    cfg = default_body_config()
    cfg.segments[0].rings = 1
    with pytest.raises(BodyConfigError):
        build_template(cfg)


def test_identity_pose_exact(template):
    st = identity_state(template.skeleton.n_joints)
    posed = pose_body(template, st)
    assert np.abs(posed.vertices - template.mesh.vertices).max() < 1e-9


def test_rotation_locality(template):
    J = template.skeleton.n_joints
    st = identity_state(J)
    st.theta[template.skeleton.index("upper_arm_l")] = (0, 0, np.pi / 2)
    posed = pose_body(template, st)
    moved = np.abs(posed.vertices - template.mesh.vertices).max(axis=1)
    torso = template.segment_of_vertex == template.segment_index("torso")
    pure_torso = torso & (template.skin_weights[:, 1] == 0)
    assert moved[pure_torso].max() < 1e-9
    arm = template.segment_of_vertex == template.segment_index("upper_arm_l")
    assert moved[arm].max() > 0.05


def test_beta_arm_length(template):
    J = template.skeleton.n_joints
    st = identity_state(J)
    for name in ("upper_arm_l", "lower_arm_l"):
        st.beta[template.skeleton.index(name), 0] = 1.5
    st0 = identity_state(J)
    sh = template.skeleton.index("upper_arm_l")
    d0 = np.linalg.norm(segment_distal_end(template, st0, "lower_arm_l")
                        - joint_world_positions(template, st0)[sh])
    d1 = np.linalg.norm(segment_distal_end(template, st, "lower_arm_l")
                        - joint_world_positions(template, st)[sh])
    assert d1 / d0 == pytest.approx(1.5, abs=1e-9)


def test_global_rotation_equivariance(template):
    J = template.skeleton.n_joints
    rot = np.array([0.3, -0.2, 0.5])
    st = identity_state(J)
    st.theta[0] = rot
    posed = pose_body(template, st)
    R = _axis_angle_matrix(rot)
    expected = template.mesh.vertices @ R.T  # root pivot is the origin
    assert np.abs(posed.vertices - expected).max() < 1e-7


def test_partition_of_unity(template):
    assert np.abs(template.skin_weights.sum(axis=1) - 1).max() < 1e-6
    assert (template.skin_weights >= 0).all()


def test_state_validation(template):
    J = template.skeleton.n_joints
    with pytest.raises(BodyConfigError):
        BodyState(np.full((J, 2), 0.1), np.zeros((J, 3)))
    with pytest.raises(BodyConfigError):
        pose_body(template, BodyState(np.ones((J + 1, 2)), np.zeros((J + 1, 3))))


def test_uv_lookup_corner_and_centroid(template):
    f = int(np.nonzero(template.chart_ids == template.segment_index("torso"))[0][20])
    corner = BarycentricPoint(f, np.array([1.0, 0.0, 0.0]))
    uv, chart = body_uv_lookup(template, corner)
    assert np.allclose(uv, template.atlas_uv[f][0])
    centroid = BarycentricPoint(f, np.ones(3) / 3)
    uv_c, _ = body_uv_lookup(template, centroid)
    assert np.allclose(uv_c, template.atlas_uv[f].mean(axis=0))
    assert chart == template.segment_index("torso")


def test_uv_lookup_converges_at_shared_edge(template):
    """Matched points on the two sides of an interior edge get one uv."""
    name = "torso"
    for t_frac in (0.3, 0.62):
        for u_frac in (0.2, 0.45):
            a = segment_anchor(template, name, u_frac, t_frac - 1e-9)
            b = segment_anchor(template, name, u_frac, t_frac + 1e-9)
            uva, _ = body_uv_lookup(template, a)
            uvb, _ = body_uv_lookup(template, b)
            assert np.linalg.norm(uva - uvb) < 1e-6


def test_segment_anchor_on_surface(template, body_tree):
    vn = template.vertex_normals()
    anchor = segment_anchor(template, "torso", 0.37, 0.55)
    p = anchor.point(template.mesh)
    n = anchor.interpolate(vn, template.mesh.faces)
    n /= np.linalg.norm(n)
    c = nearest_ray_correspondence(p + 0.02 * n, template.mesh, body_tree, k=16)
    assert c.residual < 1e-6
    assert c.normal_distance == pytest.approx(0.02, abs=1e-6)


def test_normal_map_forward_side(template):
    nm = render_normal_map(template, template.mesh, 64)
    # torso chart cell: chart 0 occupies the first grid cell
    j = template.segment_index("torso")
    cell = 1.0 / 4
    ii, jj = np.nonzero(nm.mask)
    sel = (jj * 1.0 / 64 < cell) & (ii * 1.0 / 64 < cell)
    assert sel.any()
    decoded = nm.channels[:, ii[sel], jj[sel]].T * 2 - 1
    # the forward-facing band of the torso chart has +z normals; check that
    # forward normals exist and that all normals are unit length
    assert decoded[:, 2].max() > 0.9
    norms = np.linalg.norm(decoded, axis=1)
    assert norms.min() > 0.99 and norms.max() < 1.01


def test_normal_map_two_resolutions(template):
    posed = pose_body(template, identity_state(template.skeleton.n_joints))
    lo = render_normal_map(template, posed, 64)
    hi = render_normal_map(template, posed, 128)
    up_mask = np.repeat(np.repeat(lo.mask, 2, axis=0), 2, axis=1)
    up_vals = np.repeat(np.repeat(lo.channels, 2, axis=1), 2, axis=2)
    shared = up_mask & hi.mask
    err = np.abs(up_vals[:, shared] - hi.channels[:, shared]).mean()
    assert err < 0.05


def test_unused_chart_cells_empty(template):
    mask, owner, _ = rasterize_atlas(template, 64)
    n_seg = len(template.config.segments)
    cell = 64 // 4
    for idx in range(n_seg, 16):
        r, c = divmod(idx, 4)
        block = mask[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell]
        assert not block.any()


def test_atlas_no_strict_overlaps(template):
    uv = template.atlas_uv
    R = 64
    count = np.zeros((R, R), dtype=int)
    for t in range(len(uv)):
        a, b, c = uv[t]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        j0, j1 = max(int(lo[0] * R - 0.5), 0), min(int(np.ceil(hi[0] * R - 0.5)), R - 1)
        i0, i1 = max(int(lo[1] * R - 0.5), 0), min(int(np.ceil(hi[1] * R - 0.5)), R - 1)
        if j1 < j0 or i1 < i0:
            continue
        e1, e2 = b - a, c - a
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(det) < 1e-18:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        px = (jj + 0.5) / R - a[0]
        py = (ii + 0.5) / R - a[1]
        w1 = (px * e2[1] - py * e2[0]) / det
        w2 = (py * e1[0] - px * e1[1]) / det
        w0 = 1 - w1 - w2
        strict = (w0 > 1e-9) & (w1 > 1e-9) & (w2 > 1e-9)
        count[ii[strict], jj[strict]] += 1
    assert (count > 1).sum() == 0


def test_body_config_round_trip(tmp_path, template):
    path = tmp_path / "body.json"
    save_body_config(template.config, path)
    again = build_template(load_body_config(path))
    assert np.abs(again.mesh.vertices - template.mesh.vertices).max() < 1e-12
    assert np.array_equal(again.mesh.faces, template.mesh.faces)
