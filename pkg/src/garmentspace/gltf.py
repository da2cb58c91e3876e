"""Minimal glTF 2.0 export (one mesh, embedded buffer) for external viewers."""
from __future__ import annotations

import base64
import json
import struct

import numpy as np

from .mesh import TriMesh


def save_gltf(mesh: TriMesh, path) -> None:
    positions = np.asarray(mesh.vertices, dtype="<f4")
    indices = np.asarray(mesh.faces, dtype="<u4").reshape(-1)
    pos_bytes = positions.tobytes()
    idx_bytes = indices.tobytes()
    pad = (4 - len(idx_bytes) % 4) % 4
    buffer = idx_bytes + b"\x00" * pad + pos_bytes
    doc = {
        "asset": {"version": "2.0", "generator": "garmentspace"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{"attributes": {"POSITION": 1}, "indices": 0}]}],
        "buffers": [{
            "byteLength": len(buffer),
            "uri": "data:application/octet-stream;base64," + base64.b64encode(buffer).decode(),
        }],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": len(idx_bytes), "target": 34963},
            {"buffer": 0, "byteOffset": len(idx_bytes) + pad,
             "byteLength": len(pos_bytes), "target": 34962},
        ],
        "accessors": [
            {"bufferView": 0, "componentType": 5125, "count": int(indices.size),
             "type": "SCALAR"},
            {"bufferView": 1, "componentType": 5126, "count": int(len(positions)),
             "type": "VEC3",
             "min": positions.min(axis=0).tolist(),
             "max": positions.max(axis=0).tolist()},
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
