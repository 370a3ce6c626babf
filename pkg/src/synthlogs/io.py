"""File formats: point clouds, annotations, model/statistics JSON, heightmaps, meshes, voxel labels.

Every writer goes through :func:`atomic_write`, so an interrupted run never
leaves a half-written file behind, and every writer is deterministic so
re-running with the same inputs produces identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io as _stdio
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centerline import Centerline
from .fitting import AnnotatedLogData, KnotAnnotation, KnotRecord, LogModel
from .knotmodel import PARAM_NAMES, KnotModelError, KnotParams, knot_shell
from .logcentric import Heightmap, from_log_centric, to_log_centric
from .stats import (HierarchicalGaussian, ModelStatistics, MVNStat, NormalStat, ThicknessStats, WhorlStats)
from .surfacemodel import BaseShape, ClusterBump, GrainConfig, SurfaceKnot, ThicknessModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODEL_SCHEMA = "synthlogs.log_model"
STATS_SCHEMA = "synthlogs.model_statistics"
MANIFEST_SCHEMA = "synthlogs.dataset"


class FormatError(ValueError):
    """Malformed or unsupported file content."""


# ---------------------------------------------------------------------------
# plumbing


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, NaN/inf written as null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in (obj.tolist() if isinstance(obj, np.ndarray) else obj)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _dumps(obj) -> str:
    # json emits the shortest repr of each float, which parses back exactly
    return json.dumps(_plain(obj), indent=1, allow_nan=False) + "\n"


def _loads(text: str, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise FormatError(f"{path}: JSON parse error at byte {offset}: {exc.msg}") from None


def _num(v):
    v = float(v)
    return None if not np.isfinite(v) else v


def _unnum(v):
    return float("nan") if v is None else float(v)


def _check_keys(d, allowed, where, version_hint=True):
    extra = set(d) - set(allowed)
    if extra:
        hint = f" (this reader understands schema version {SCHEMA_VERSION})" if version_hint else ""
        raise FormatError(f"{where}: unknown field(s) {sorted(extra)}{hint}")
    missing = [k for k in allowed if k not in d]
    return missing


def _require(d, keys, where):
    missing = [k for k in keys if k not in d]
    if missing:
        raise FormatError(f"{where}: missing field(s) {missing}")


def _header(d, schema, path):
    if not isinstance(d, dict) or d.get("schema") != schema:
        raise FormatError(f"{path}: not a {schema} document")
    if d.get("version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: schema version {d.get('version')} is not supported "
                          f"(expected {SCHEMA_VERSION})")


# ---------------------------------------------------------------------------
# point clouds


_PLY_TYPES = {"char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
              "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
              "float": "f4", "float32": "f4", "double": "f8", "float64": "f8"}


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list          # (name, type) or (name, ("list", count_type, item_type))


def _parse_ply_header(raw: bytes, path):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: malformed PLY header")
    nl = raw.find(b"\n", end)
    body_start = nl + 1 if nl >= 0 else len(raw)
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element" and len(tok) == 3:
            elements.append(_PlyElement(tok[1], int(tok[2]), []))
        elif tok[0] == "property" and elements:
            if tok[1] == "list" and len(tok) == 5:
                elements[-1].props.append((tok[4], ("list", tok[2], tok[3])))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1].props.append((tok[2], tok[1]))
            else:
                raise FormatError(f"{path}: malformed PLY property line {line!r}")
        else:
            raise FormatError(f"{path}: malformed PLY header line {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements, body_start


def _read_ply_vertices(path):
    raw = Path(path).read_bytes()
    fmt, elements, start = _parse_ply_header(raw, path)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise FormatError(f"{path}: PLY has no vertex element")
    names = [p[0] for p in vertex.props]
    if not all(a in names for a in "xyz"):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    if any(isinstance(t, tuple) for _, t in vertex.props):
        raise FormatError(f"{path}: list properties on vertices are not supported")
    before = elements[:elements.index(vertex)]
    if fmt == "ascii":
        text = raw[start:].decode("ascii", errors="replace").splitlines()
        skip = sum(e.count for e in before)
        rows = text[skip:skip + vertex.count]
        if len(rows) < vertex.count:
            raise FormatError(f"{path}: PLY ends after {len(rows)} of {vertex.count} vertices")
        try:
            table = np.array([[float(v) for v in r.split()[:len(names)]] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: bad PLY vertex row: {exc}") from None
        table = table.reshape(-1, len(names))
        cols = [table[:, names.index(a)] for a in "xyz"]
    else:
        offset = start
        for e in before:
            if any(isinstance(t, tuple) for _, t in e.props):
                raise FormatError(f"{path}: list elements before vertices are not supported in binary PLY")
            offset += e.count * sum(np.dtype(_PLY_TYPES[t]).itemsize for _, t in e.props)
        dt = np.dtype([(n, "<" + _PLY_TYPES[t]) for n, t in vertex.props])
        need = offset + dt.itemsize * vertex.count
        if len(raw) < need:
            raise FormatError(f"{path}: PLY truncated at byte {len(raw)} (vertex data needs {need})")
        arr = np.frombuffer(raw, dtype=dt, count=vertex.count, offset=offset)
        cols = [arr[a].astype(np.float64) for a in "xyz"]
    return np.stack(cols, axis=1), elements, fmt


def _finite_rows(pts, path):
    ok = np.all(np.isfinite(pts), axis=1)
    rejected = int((~ok).sum())
    if rejected:
        logger.warning("%s: rejected %d non-finite point(s)", path, rejected)
    pts = pts[ok]
    if len(pts) == 0:
        raise FormatError(f"{path}: no points")
    return pts, rejected


def read_point_cloud(path):
    """Load an (N, 3) point cloud from PLY, CSV (header x,y,z) or whitespace XYZ.

    Returns:
        (points, rejected): finite points in file order and the count of
        dropped non-finite rows.
    """
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ply":
        pts, _, _ = _read_ply_vertices(path)
    elif ext == ".csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip().lower() for h in next(reader, [])]
            if not all(a in header for a in "xyz"):
                raise FormatError(f"{path}: CSV header must contain x, y, z")
            idx = [header.index(a) for a in "xyz"]
            rows = []
            for r in reader:
                if not r:
                    continue
                try:
                    rows.append([float(r[i]) for i in idx])
                except (ValueError, IndexError):
                    raise FormatError(f"{path}: bad CSV row {r!r}") from None
        pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    elif ext in (".xyz", ".txt"):
        try:
            pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.shape[1] < 3:
            raise FormatError(f"{path}: XYZ rows need 3 columns")
        pts = pts[:, :3]
    else:
        raise FormatError(f"{path}: unknown point cloud extension {ext!r}")
    return _finite_rows(pts, path)


def _ply_bytes(vertices, faces=None, binary=True, comment="units mm"):
    v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"comment {comment}",
            f"element vertex {len(v)}", "property double x", "property double y", "property double z"]
    if faces is not None:
        f = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
        head += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    out = _stdio.BytesIO()
    out.write(("\n".join(head) + "\n").encode("ascii"))
    if binary:
        out.write(v.astype("<f8").tobytes())
        if faces is not None:
            rec = np.zeros(len(f), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            rec["n"] = 3
            rec["i"] = f
            out.write(rec.tobytes())
    else:
        out.write("".join(f"{a!r} {b!r} {c!r}\n" for a, b, c in v.tolist()).encode("ascii"))
        if faces is not None:
            out.write("".join(f"3 {a} {b} {c}\n" for a, b, c in f.tolist()).encode("ascii"))
    return out.getvalue()


def write_point_cloud(path, points, binary: bool = True):
    path = Path(path)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ext = path.suffix.lower()
    if ext == ".ply":
        atomic_write(path, _ply_bytes(pts, binary=binary))
    elif ext == ".csv":
        atomic_write(path, "x,y,z\n" + "".join(f"{a!r},{b!r},{c!r}\n" for a, b, c in pts.tolist()))
    elif ext in (".xyz", ".txt"):
        atomic_write(path, "".join(f"{a!r} {b!r} {c!r}\n" for a, b, c in pts.tolist()))
    else:
        raise FormatError(f"{path}: unknown point cloud extension {ext!r}")


# ---------------------------------------------------------------------------
# knot annotations


def _check_groups(groups, path):
    ids = [g.knot_id for g in groups]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise FormatError(f"{path}: duplicate knot id(s) {dup}")
    for g in groups:
        if len(g.points) == 0:
            raise FormatError(f"{path}: knot {g.knot_id!r} has no points")
    return groups


def read_knot_annotations(path):
    """Knot point groups from JSON (list of {knot_id, cluster_id?, points}) or CSV (knot_id[,cluster_id],x,y,z)."""
    path = Path(path)
    ext = path.suffix.lower()
    groups = []
    if ext == ".json":
        data = _loads(path.read_text(), path)
        if not isinstance(data, list):
            raise FormatError(f"{path}: annotations must be a JSON list")
        for i, item in enumerate(data):
            if not isinstance(item, dict) or "knot_id" not in item or "points" not in item:
                raise FormatError(f"{path}: entry {i} needs knot_id and points")
            _check_keys(item, ("knot_id", "cluster_id", "points"), f"{path}: entry {i}", version_hint=False)
            pts = np.asarray(item["points"], dtype=np.float64).reshape(-1, 3)
            cid = item.get("cluster_id")
            groups.append(KnotAnnotation(str(item["knot_id"]), pts, None if cid is None else str(cid)))
    elif ext == ".csv":
        order, pts, clusters = [], {}, {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = [f.strip() for f in (reader.fieldnames or [])]
            if not {"knot_id", "x", "y", "z"} <= set(fields):
                raise FormatError(f"{path}: CSV needs knot_id, x, y, z columns")
            for row in reader:
                kid = row["knot_id"].strip()
                if kid not in pts:
                    order.append(kid)
                    pts[kid] = []
                    cid = (row.get("cluster_id") or "").strip()
                    clusters[kid] = cid or None
                try:
                    pts[kid].append([float(row["x"]), float(row["y"]), float(row["z"])])
                except ValueError:
                    raise FormatError(f"{path}: bad coordinates in row {row!r}") from None
        groups = [KnotAnnotation(k, np.asarray(pts[k]).reshape(-1, 3), clusters[k]) for k in order]
    else:
        raise FormatError(f"{path}: unknown annotation extension {ext!r}")
    return _check_groups(groups, path)


def write_knot_annotations(path, groups):
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = [{"knot_id": g.knot_id, "cluster_id": g.cluster_id,
                 "points": np.asarray(g.points, dtype=np.float64).tolist()} for g in groups]
        atomic_write(path, json.dumps(data, separators=(",", ":")) + "\n")
    elif path.suffix.lower() == ".csv":
        lines = ["knot_id,cluster_id,x,y,z\n"]
        for g in groups:
            cid = "" if g.cluster_id is None else g.cluster_id
            lines += [f"{g.knot_id},{cid},{a!r},{b!r},{c!r}\n" for a, b, c in np.asarray(g.points).tolist()]
        atomic_write(path, "".join(lines))
    else:
        raise FormatError(f"{path}: unknown annotation extension")


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestEntry:
    name: str
    surface: Path
    knots: Path | None


def read_manifest(path, verify_checksums: bool = True):
    path = Path(path)
    d = _loads(path.read_text(), path)
    _header(d, MANIFEST_SCHEMA, path)
    _check_keys(d, ("schema", "version", "units", "scale_note", "logs"), str(path))
    if d.get("units") != "mm":
        raise FormatError(f"{path}: units must be 'mm' (got {d.get('units')!r})")
    out = []
    for i, log in enumerate(d.get("logs", [])):
        _check_keys(log, ("name", "surface", "knots", "checksums"), f"{path}: log {i}")
        _require(log, ("name", "surface"), f"{path}: log {i}")
        surface = (path.parent / log["surface"]).resolve()
        knots = (path.parent / log["knots"]).resolve() if log.get("knots") else None
        for f in [surface] + ([knots] if knots else []):
            if not f.exists():
                raise FileNotFoundError(f"{path}: listed file {f} does not exist")
        if verify_checksums:
            for rel, digest in (log.get("checksums") or {}).items():
                if sha256_file(path.parent / rel) != digest:
                    raise FormatError(f"{path}: checksum mismatch for {rel}")
        out.append(ManifestEntry(str(log["name"]), surface, knots))
    return out


def write_manifest(path, logs, scale_note="coordinates in millimetres at real log size"):
    """``logs``: list of (name, surface_relpath, knots_relpath) relative to the manifest directory."""
    path = Path(path)
    entries = []
    for name, surface, knots in logs:
        sums = {surface: sha256_file(path.parent / surface)}
        if knots:
            sums[knots] = sha256_file(path.parent / knots)
        entries.append({"name": name, "surface": surface, "knots": knots, "checksums": sums})
    atomic_write(path, _dumps({"schema": MANIFEST_SCHEMA, "version": SCHEMA_VERSION, "units": "mm",
                               "scale_note": scale_note, "logs": entries}))


def load_log_data(entry: ManifestEntry) -> AnnotatedLogData:
    pts, _ = read_point_cloud(entry.surface)
    knots = read_knot_annotations(entry.knots) if entry.knots else []
    return AnnotatedLogData(pts, knots, entry.name)


def write_output_manifest(directory, files):
    """Checksummed listing of produced files (relative to ``directory``)."""
    directory = Path(directory)
    listing = [{"path": str(f), "sha256": sha256_file(directory / f)} for f in sorted(map(str, files))]
    atomic_write(directory / "outputs.json", _dumps({"units": "mm", "files": listing}))


# ---------------------------------------------------------------------------
# LogModel JSON


def _params_dict(p: KnotParams):
    return {n: float(getattr(p, n)) for n in PARAM_NAMES}


def model_to_dict(m: LogModel) -> dict:
    c = m.centerline
    return {
        "schema": MODEL_SCHEMA, "version": SCHEMA_VERSION, "units": "mm",
        "centerline": {"coeffs_y": c.coeffs_y.tolist(), "coeffs_z": c.coeffs_z.tolist(), "x_min": c.x_min,
                       "x_max": c.x_max, "offset_y": c.offset_y, "offset_z": c.offset_z, "margin": c.margin},
        "thickness": {"a": m.thickness.a, "b": m.thickness.b, "rmse": _num(m.thickness.rmse),
                      "clusters": [{"center": b.center, "alpha": b.alpha, "beta": b.beta, "gamma": b.gamma}
                                   for b in m.thickness.clusters]},
        "base_shape": {"coeffs": m.base_shape.coeffs.tolist(), "l_min": m.base_shape.l_min,
                       "l_max": m.base_shape.l_max},
        "surface_knots": [{"theta": s.theta, "l": s.l, "r": s.r, "gamma": s.gamma, "alpha_theta": s.alpha_theta,
                           "alpha_l": s.alpha_l, "m": s.m, "amplitude": s.amplitude} for s in m.surface_knots],
        "grain": {f: getattr(m.grain, f) for f in ("octaves", "base_frequency", "kernel_bandwidth",
                                                    "impulse_density", "amplitude", "persistence", "seed")},
        "knots": [{"knot_id": k.knot_id, "cluster_id": k.cluster_id, "theta_mean": k.theta_mean,
                   "delta_l": k.delta_l, "params": _params_dict(k.params)} for k in m.knots],
        "n_theta": int(m.n_theta), "n_l": int(m.n_l), "thickness_band": bool(m.thickness_band),
        "metadata": m.metadata,
    }


def _fields(d, keys, where):
    if not isinstance(d, dict):
        raise FormatError(f"{where}: expected an object")
    _check_keys(d, keys, where)
    _require(d, keys, where)
    return d


def model_from_dict(d: dict, path="<model>") -> LogModel:
    _header(d, MODEL_SCHEMA, path)
    top = ("schema", "version", "units", "centerline", "thickness", "base_shape", "surface_knots", "grain",
           "knots", "n_theta", "n_l", "thickness_band", "metadata")
    _fields(d, top, str(path))
    if d["units"] != "mm":
        raise FormatError(f"{path}: units must be 'mm'")
    try:
        c = _fields(d["centerline"], ("coeffs_y", "coeffs_z", "x_min", "x_max", "offset_y", "offset_z", "margin"),
                    f"{path}: centerline")
        cl = Centerline(np.array(c["coeffs_y"], float), np.array(c["coeffs_z"], float), _unnum(c["x_min"]),
                        _unnum(c["x_max"]), _unnum(c["offset_y"]), _unnum(c["offset_z"]), _unnum(c["margin"]))
        t = _fields(d["thickness"], ("a", "b", "rmse", "clusters"), f"{path}: thickness")
        bumps = tuple(ClusterBump(**{k: _unnum(v) for k, v in _fields(b, ("center", "alpha", "beta", "gamma"),
                                                                     f"{path}: thickness cluster").items()})
                      for b in t["clusters"])
        thick = ThicknessModel(_unnum(t["a"]), _unnum(t["b"]), bumps, _unnum(t["rmse"]))
        b = _fields(d["base_shape"], ("coeffs", "l_min", "l_max"), f"{path}: base_shape")
        base = BaseShape(np.array(b["coeffs"], dtype=np.float64), _unnum(b["l_min"]), _unnum(b["l_max"]))
        sk_keys = ("theta", "l", "r", "gamma", "alpha_theta", "alpha_l", "m", "amplitude")
        sks = [SurfaceKnot(**{k: _unnum(v) for k, v in _fields(s, sk_keys, f"{path}: surface knot").items()})
               for s in d["surface_knots"]]
        g = _fields(d["grain"], ("octaves", "base_frequency", "kernel_bandwidth", "impulse_density", "amplitude",
                                 "persistence", "seed"), f"{path}: grain")
        grain = GrainConfig(int(g["octaves"]), _unnum(g["base_frequency"]), _unnum(g["kernel_bandwidth"]),
                            _unnum(g["impulse_density"]), _unnum(g["amplitude"]), _unnum(g["persistence"]),
                            int(g["seed"]))
        knots = []
        for k in d["knots"]:
            _fields(k, ("knot_id", "cluster_id", "theta_mean", "delta_l", "params"), f"{path}: knot")
            pd = _fields(k["params"], PARAM_NAMES, f"{path}: knot params")
            cid = k["cluster_id"]
            knots.append(KnotRecord(KnotParams(**{n: _unnum(pd[n]) for n in PARAM_NAMES}), _unnum(k["delta_l"]),
                                    _unnum(k["theta_mean"]), str(k["knot_id"]), None if cid is None else str(cid)))
    except (TypeError, KnotModelError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return LogModel(cl, thick, base, sks, grain, knots, int(d["n_theta"]), int(d["n_l"]), bool(d["thickness_band"]),
                    dict(d["metadata"]))


def write_model(path, model: LogModel):
    atomic_write(path, _dumps(model_to_dict(model)))


def read_model(path) -> LogModel:
    path = Path(path)
    return model_from_dict(_loads(path.read_text(), path), path)


# ---------------------------------------------------------------------------
# ModelStatistics JSON


def _normal_d(n: NormalStat):
    return {"mean": n.mean, "sd": n.sd, "count": int(n.count), "defaulted": bool(n.defaulted)}


def _mvn_d(m: MVNStat):
    return {"mean": m.mean.tolist(), "cov": m.cov.tolist(), "count": int(m.count), "defaulted": bool(m.defaulted)}


def stats_to_dict(s: ModelStatistics) -> dict:
    hg = s.knot_params
    return {
        "schema": STATS_SCHEMA, "version": SCHEMA_VERSION, "units": "mm",
        "knot_params": {"names": list(hg.names), "levels": list(hg.levels),
                        "global_mu_mean": hg.global_mu_mean.tolist(), "global_mu_sd": hg.global_mu_sd.tolist(),
                        "log_mu_sd": hg.log_mu_sd.tolist(), "global_sigma_mean": hg.global_sigma_mean.tolist(),
                        "global_sigma_sd": hg.global_sigma_sd.tolist(), "correlation": hg.correlation.tolist(),
                        "counts": dict(hg.counts), "defaulted": dict(hg.defaulted)},
        "surface_knot_mvn": _mvn_d(s.surface_knot_mvn),
        "centerline_mvn": _mvn_d(s.centerline_mvn),
        "base_shape": {"mean": s.base_shape_mean.tolist(), "sd": s.base_shape_sd.tolist(),
                       "count": int(s.base_shape_count), "defaulted": bool(s.base_shape_defaulted)},
        "thickness": {"line": _mvn_d(s.thickness.line), "bump_alpha": _normal_d(s.thickness.bump_alpha),
                      "bump_beta": _normal_d(s.thickness.bump_beta), "bump_gamma": _normal_d(s.thickness.bump_gamma)},
        "whorls": {"log_spacing": _normal_d(s.whorls.log_spacing),
                   "knots_per_cluster": {str(k): v for k, v in sorted(s.whorls.knots_per_cluster.items())}},
        "length_range": list(s.length_range), "radius_range": list(s.radius_range),
        "model_count": int(s.model_count),
    }


def stats_from_dict(d: dict, path="<stats>") -> ModelStatistics:
    _header(d, STATS_SCHEMA, path)
    _fields(d, ("schema", "version", "units", "knot_params", "surface_knot_mvn", "centerline_mvn", "base_shape",
                "thickness", "whorls", "length_range", "radius_range", "model_count"), str(path))

    def normal(x, where):
        _fields(x, ("mean", "sd", "count", "defaulted"), where)
        return NormalStat(_unnum(x["mean"]), _unnum(x["sd"]), int(x["count"]), bool(x["defaulted"]))

    def mvn(x, where):
        _fields(x, ("mean", "cov", "count", "defaulted"), where)
        return MVNStat(np.array(x["mean"], float), np.array(x["cov"], float), int(x["count"]), bool(x["defaulted"]))

    try:
        k = _fields(d["knot_params"], ("names", "levels", "global_mu_mean", "global_mu_sd", "log_mu_sd",
                                       "global_sigma_mean", "global_sigma_sd", "correlation", "counts", "defaulted"),
                    f"{path}: knot_params")
        hg = HierarchicalGaussian(tuple(k["names"]), k["global_mu_mean"], k["global_mu_sd"], k["global_sigma_mean"],
                                  k["global_sigma_sd"], k["correlation"], k["log_mu_sd"], dict(k["counts"]),
                                  dict(k["defaulted"]), tuple(k["levels"]))
        bs = _fields(d["base_shape"], ("mean", "sd", "count", "defaulted"), f"{path}: base_shape")
        t = _fields(d["thickness"], ("line", "bump_alpha", "bump_beta", "bump_gamma"), f"{path}: thickness")
        thick = ThicknessStats(mvn(t["line"], f"{path}: thickness.line"), normal(t["bump_alpha"], "bump_alpha"),
                               normal(t["bump_beta"], "bump_beta"), normal(t["bump_gamma"], "bump_gamma"))
        w = _fields(d["whorls"], ("log_spacing", "knots_per_cluster"), f"{path}: whorls")
        whorls = WhorlStats(normal(w["log_spacing"], "log_spacing"),
                            {int(kk): _unnum(v) for kk, v in w["knots_per_cluster"].items()})
        return ModelStatistics(hg, mvn(d["surface_knot_mvn"], "surface_knot_mvn"),
                               mvn(d["centerline_mvn"], "centerline_mvn"), np.array(bs["mean"], float),
                               np.array(bs["sd"], float), thick, whorls, tuple(d["length_range"]),
                               tuple(d["radius_range"]), int(bs["count"]), bool(bs["defaulted"]),
                               int(d["model_count"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from None


def write_stats(path, stats: ModelStatistics):
    atomic_write(path, _dumps(stats_to_dict(stats)))


def read_stats(path) -> ModelStatistics:
    path = Path(path)
    return stats_from_dict(_loads(path.read_text(), path), path)


def read_document(path):
    """Model or statistics, whichever schema the file declares."""
    path = Path(path)
    d = _loads(path.read_text(), path)
    schema = d.get("schema") if isinstance(d, dict) else None
    if schema == MODEL_SCHEMA:
        return model_from_dict(d, path)
    if schema == STATS_SCHEMA:
        return stats_from_dict(d, path)
    raise FormatError(f"{path}: unknown document schema {schema!r}")


# ---------------------------------------------------------------------------
# heightmaps


def _require_physical(h: Heightmap):
    if not (np.all(np.isfinite(h.values)) and np.all(h.values > 0)):
        raise FormatError("refusing to export a heightmap with non-positive or non-finite cells")


def write_heightmap_png(path, h: Heightmap):
    """16-bit grayscale PNG (rows = l, columns = theta) plus a ``.json`` sidecar with the mm scale."""
    from PIL import Image

    _require_physical(h)
    path = Path(path)
    lo, hi = float(h.values.min()), float(h.values.max())
    span = hi - lo
    q = np.zeros(h.values.shape, dtype=np.uint16) if span == 0 else \
        np.round((h.values - lo) / span * 65535.0).astype(np.uint16)
    buf = _stdio.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())
    side = {"units": "mm", "min": lo, "max": hi, "scale": span / 65535.0, "n_theta": h.n_theta, "n_l": h.n_l,
            "l_min": h.l_min, "l_max": h.l_max, "rows": "l", "columns": "theta",
            "theta_of_column": "j * 2 pi / n_theta", "l_of_row": "l_min + (i + 0.5) * (l_max - l_min) / n_l"}
    atomic_write(path.with_suffix(".json"), _dumps(side))


def read_heightmap_png(path) -> Heightmap:
    from PIL import Image

    path = Path(path)
    side = _loads(path.with_suffix(".json").read_text(), path.with_suffix(".json"))
    q = np.asarray(Image.open(path), dtype=np.float64)
    return Heightmap(side["min"] + q * side["scale"], float(side["l_min"]), float(side["l_max"]))


def write_heightmap_csv(path, h: Heightmap):
    _require_physical(h)
    head = f"# heightmap rho (mm); rows l in [{h.l_min!r}, {h.l_max!r}] n_l={h.n_l}; columns theta n_theta={h.n_theta}\n"
    body = "".join(",".join(repr(v) for v in row) + "\n" for row in h.values.tolist())
    atomic_write(path, head + body)


def read_heightmap_csv(path) -> Heightmap:
    path = Path(path)
    first = path.read_text().split("\n", 1)[0]
    try:
        rng = first.split("[", 1)[1].split("]", 1)[0]
        l_min, l_max = (float(v) for v in rng.split(","))
    except (IndexError, ValueError):
        raise FormatError(f"{path}: missing heightmap header") from None
    return Heightmap(np.loadtxt(path, delimiter=",", comments="#", ndmin=2), l_min, l_max)


# ---------------------------------------------------------------------------
# meshes


def heightmap_mesh(h: Heightmap, centerline: Centerline, caps: bool = True):
    """Vertices (Cartesian) and outward-facing triangles of the heightmap tube.

    Vertices sit at cell centres, ``n_l * n_theta`` of them, plus one centre
    vertex per end when ``caps`` is set (which makes the mesh closed).
    """
    _require_physical(h)
    th, ll = np.meshgrid(h.theta_centers, h.l_centers)
    q = np.stack([th.ravel(), ll.ravel(), h.values.ravel()], axis=1)
    verts = from_log_centric(q, centerline)
    nt, nl = h.n_theta, h.n_l
    i, j = np.meshgrid(np.arange(nl - 1), np.arange(nt), indexing="ij")
    a = i * nt + j
    b = i * nt + (j + 1) % nt
    c = (i + 1) * nt + j
    d = (i + 1) * nt + (j + 1) % nt
    faces = np.concatenate([np.stack([a, b, d], -1).reshape(-1, 3), np.stack([a, d, c], -1).reshape(-1, 3)])
    if caps:
        ends = from_log_centric(np.array([[0.0, h.l_centers[0], 0.0], [0.0, h.l_centers[-1], 0.0]]), centerline)
        lo, hi = len(verts), len(verts) + 1
        verts = np.concatenate([verts, ends])
        jj = np.arange(nt)
        top = (nl - 1) * nt
        faces = np.concatenate([faces, np.stack([np.full(nt, lo), (jj + 1) % nt, jj], 1),
                                np.stack([np.full(nt, hi), top + jj, top + (jj + 1) % nt], 1)])
    faces = faces.astype(np.int64)
    if caps and _signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1].copy()
    return verts, faces


def _signed_volume(verts, faces):
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def write_mesh(path, h: Heightmap, centerline: Centerline, caps: bool = True, binary: bool = True):
    v, f = heightmap_mesh(h, centerline, caps)
    atomic_write(path, _ply_bytes(v, f, binary=binary))


def read_ply_mesh(path):
    """Vertices and triangles of a PLY mesh written by this module (ascii or binary)."""
    raw = Path(path).read_bytes()
    fmt, elements, start = _parse_ply_header(raw, path)
    verts, _, _ = _read_ply_vertices(path)
    face = next((e for e in elements if e.name == "face"), None)
    if face is None:
        return verts, np.zeros((0, 3), dtype=np.int64)
    if fmt == "ascii":
        lines = raw[start:].decode("ascii").splitlines()
        nv = next(e.count for e in elements if e.name == "vertex")
        rows = [list(map(int, r.split()))[1:4] for r in lines[nv:nv + face.count]]
        return verts, np.array(rows, dtype=np.int64).reshape(-1, 3)
    off = start + len(verts) * 24
    rec = np.frombuffer(raw, dtype=[("n", "u1"), ("i", "<i4", (3,))], count=face.count, offset=off)
    return verts, rec["i"].astype(np.int64)


def knot_shell_mesh(knot: KnotRecord, centerline: Centerline, samples_axis: int = 32, samples_angle: int = 24):
    """Tube around one knot's center curve, Cartesian; the pith end collapses to a point."""
    k = knot.resolve()
    shell = knot_shell(k, samples_axis, samples_angle)
    s, l, rho = shell[..., 0], shell[..., 1], np.maximum(shell[..., 2], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(rho > 0, s / np.where(rho > 0, rho, 1.0), 0.0) + knot.theta_mean
    q = np.stack([th.ravel(), l.ravel(), rho.ravel()], axis=1)
    verts = from_log_centric(q, centerline)
    na = samples_angle
    i, j = np.meshgrid(np.arange(samples_axis - 1), np.arange(na), indexing="ij")
    a = i * na + j
    b = i * na + (j + 1) % na
    c = (i + 1) * na + j
    d = (i + 1) * na + (j + 1) % na
    faces = np.concatenate([np.stack([a, d, b], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return verts, faces


def write_knot_shells(directory, model: LogModel, samples_axis: int = 32, samples_angle: int = 24,
                      binary: bool = True):
    directory = Path(directory)
    names = []
    for k in model.knots:
        v, f = knot_shell_mesh(k, model.centerline, samples_axis, samples_angle)
        name = f"knot_{k.knot_id}.ply"
        atomic_write(directory / name, _ply_bytes(v, f, binary=binary))
        names.append(name)
    return names


# ---------------------------------------------------------------------------
# knot labels


def write_knot_labels_json(path, model: LogModel):
    data = [{"knot_id": k.knot_id, "cluster_id": k.cluster_id, "theta_mean": k.theta_mean, "delta_l": k.delta_l,
             "exit_theta": k.exit_theta, "exit_l": k.exit_l, "params": _params_dict(k.params)} for k in model.knots]
    atomic_write(path, _dumps({"units": "mm", "knots": data}))


def rle_encode(a):
    flat = np.asarray(a).ravel()
    if flat.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(flat)) + 1])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return flat[starts].astype(np.int64), lengths.astype(np.int64)


def rle_decode(values, lengths, shape):
    return np.repeat(np.asarray(values), np.asarray(lengths)).reshape(shape)


def voxelize_knots(model: LogModel, voxel_size: float = 4.0, h: Heightmap | None = None):
    """Label grid over the log's bounding box: 0 = wood, i + 1 = inside knot i.

    Voxel centres are tested against each knot's shell (inside when the
    signed shell residual is negative); with ``h`` voxels above the surface
    are left as 0. Returns (labels[x, y, z], origin).
    """
    from .fitting import shell_residuals
    from .logcentric import heightmap_sample, to_knot_frame

    c = model.centerline
    xs = np.linspace(c.x_min, c.x_max, 64)
    ys, zs = c.shape(xs)
    r = (h.values.max() if h is not None else abs(model.thickness.b) + abs(model.thickness.a) * c.length) * 1.1
    lo = np.array([c.x_min, ys.min() + c.offset_y - r, zs.min() + c.offset_z - r])
    hi = np.array([c.x_max, ys.max() + c.offset_y + r, zs.max() + c.offset_z + r])
    shape = tuple(np.maximum(np.ceil((hi - lo) / voxel_size).astype(int), 1))
    labels = np.zeros(shape, dtype=np.int32)
    for idx, k in enumerate(model.knots):
        rk = k.resolve()
        v, _ = knot_shell_mesh(k, c, 16, 12)
        i0 = np.clip(np.floor((v.min(axis=0) - lo) / voxel_size).astype(int) - 1, 0, np.array(shape) - 1)
        i1 = np.clip(np.ceil((v.max(axis=0) - lo) / voxel_size).astype(int) + 1, 0, np.array(shape) - 1)
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(i0, i1)], indexing="ij")
        ijk = np.stack([g.ravel() for g in grids], axis=1)
        centres = lo + (ijk + 0.5) * voxel_size
        inside_x = (centres[:, 0] > c.x_min) & (centres[:, 0] < c.x_max)
        ijk, centres = ijk[inside_x], centres[inside_x]
        if len(centres) == 0:
            continue
        q = to_log_centric(centres, c)
        s = (np.mod(q[:, 0] - k.theta_mean + np.pi, 2 * np.pi) - np.pi) * q[:, 2]
        kf = np.stack([s, q[:, 1], q[:, 2]], axis=1)
        near = (kf[:, 2] <= k.params.rho_max) & (np.abs(s) < 3 * k.params.r_max + voxel_size)
        inside = np.zeros(len(kf), dtype=bool)
        if near.any():
            inside[near] = shell_residuals(rk, kf[near]) < 0
        if h is not None and inside.any():
            ok_l = (q[:, 1] >= h.l_min) & (q[:, 1] <= h.l_max)
            under = np.zeros(len(q), dtype=bool)
            under[ok_l] = q[ok_l, 2] < heightmap_sample(h, q[ok_l, 0], q[ok_l, 1])
            inside &= under
        sel = ijk[inside]
        labels[sel[:, 0], sel[:, 1], sel[:, 2]] = idx + 1
    return labels, lo


def write_voxel_labels(path, model: LogModel, voxel_size: float = 4.0, h: Heightmap | None = None):
    """RLE-compressed label grid (``.rle.npz``-free plain JSON) plus sidecar description."""
    labels, origin = voxelize_knots(model, voxel_size, h)
    values, lengths = rle_encode(labels)
    path = Path(path)
    body = {"encoding": "rle", "order": "C", "axes": ["x", "y", "z"], "shape": list(labels.shape),
            "values": values.tolist(), "lengths": lengths.tolist()}
    atomic_write(path, json.dumps(body, separators=(",", ":")) + "\n")
    side = {"units": "mm", "voxel_size": voxel_size, "origin": origin.tolist(), "shape": list(labels.shape),
            "axes": ["x", "y", "z"], "voxel_centre": "origin + (index + 0.5) * voxel_size",
            "labels": {"0": "wood or air", **{str(i + 1): k.knot_id for i, k in enumerate(model.knots)}},
            "data": path.name}
    atomic_write(path.with_name(path.stem + ".meta.json"), _dumps(side))
    return labels


def read_voxel_labels(path):
    d = _loads(Path(path).read_text(), path)
    return rle_decode(d["values"], d["lengths"], tuple(d["shape"]))


# ---------------------------------------------------------------------------
# invariant checks


def _try(problems, name, fn):
    try:
        ok = fn()
    except Exception as exc:  # any failure inside a check counts against it
        problems.append(f"{name}: {exc}")
        return
    if ok is False:
        problems.append(name)


def validate_model(model: LogModel, check_surface: bool = True) -> list:
    """Names of violated LogModel invariants (empty when the model is valid)."""
    from .fitting import reconstruct
    from .logcentric import heightmap_sample

    problems = []
    c = model.centerline
    _try(problems, "centerline coefficients finite",
         lambda: bool(np.all(np.isfinite(c.coeffs_y)) and np.all(np.isfinite(c.coeffs_z))))
    _try(problems, "grid at least 8 x 8", lambda: model.n_theta >= 8 and model.n_l >= 8)
    _try(problems, "base shape coefficients finite", lambda: bool(np.all(np.isfinite(model.base_shape.coeffs))))
    ids = [k.knot_id for k in model.knots]
    _try(problems, "knot ids unique", lambda: len(set(ids)) == len(ids))
    for k in model.knots:
        tag = f"knot {k.knot_id}"
        _try(problems, f"{tag} parameter ranges", lambda k=k: bool(k.params.validate()))
        _try(problems, f"{tag} radius below rho_max", lambda k=k: k.params.r_max < k.params.rho_max)
        _try(problems, f"{tag} resolves", lambda k=k: bool(k.resolve()))
        _try(problems, f"{tag} exit inside log", lambda k=k: model.l_min <= k.exit_l <= model.l_max)
    for i, s in enumerate(model.surface_knots):
        _try(problems, f"surface knot {i} parameter ranges", lambda s=s: bool(s.validate()))
    if check_surface and not any(p.startswith("grid") or p.startswith("base") for p in problems):
        try:
            h, _ = reconstruct(model)
        except Exception as exc:
            problems.append(f"heightmap reconstructs: {exc}")
        else:
            _try(problems, "heightmap strictly positive and finite", h.is_physical)
            if h.is_physical():
                for k in model.knots:
                    if not (model.l_min <= k.exit_l <= model.l_max):
                        continue
                    _try(problems, f"knot {k.knot_id} rho_max matches surface within 10%",
                         lambda k=k: abs(k.params.rho_max - float(heightmap_sample(h, k.exit_theta, k.exit_l)))
                         <= 0.1 * k.params.rho_max)
    return problems


def validate_statistics(stats: ModelStatistics) -> list:
    """Names of violated ModelStatistics invariants."""
    problems = []
    hg = stats.knot_params
    _try(problems, "knot statistics", lambda: bool(hg.validate()))
    _try(problems, "whole statistics", lambda: bool(stats.validate()))
    _try(problems, "knots_per_cluster sums to 1",
         lambda: abs(sum(stats.whorls.knots_per_cluster.values()) - 1.0) < 1e-9)
    _try(problems, "knots_per_cluster counts positive", lambda: all(k > 0 for k in stats.whorls.knots_per_cluster))
    _try(problems, "whorl spacing sd >= 0", lambda: stats.whorls.log_spacing.sd >= 0)
    _try(problems, "centerline mvn size even", lambda: stats.centerline_mvn.mean.size % 2 == 0)
    _try(problems, "surface knot mvn has 4 dims", lambda: stats.surface_knot_mvn.mean.size == 4)
    return list(dict.fromkeys(problems))
