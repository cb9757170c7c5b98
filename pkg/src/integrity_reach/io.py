"""Model files, fixture loading, ZOH discretization and report emission."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy.linalg

from ._validation import as_matrix
from .calibration import DetectorSpec
from .errors import ValidationError
from .model import AttackScenario, PlantModel
from .policy import EnforcementPolicy, SensorSchedule

SCHEMA_VERSION = 1
FIXTURES = ("vehicle", "cacc")


def discretize_zoh(A, B, Ts):
    """Zero-order-hold discretization via the exponential of the augmented matrix."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B", shape=(A.shape[0], None))
    Ts = float(Ts)
    if not Ts > 0.0:
        raise ValidationError("sampling period must be positive")
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = scipy.linalg.expm(aug * Ts)
    return E[:n, :n], E[:n, n:]


_MATRIX = {
    "type": "object",
    "required": ["shape", "data"],
    "additionalProperties": False,
    "properties": {
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "data": {"type": "array", "items": {"type": "number"}},
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "A", "B", "C", "W", "R", "detector", "scenario"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "notes": {"type": "string"},
        "continuous": {"type": "boolean"},
        "sampling_period": {"type": "number", "exclusiveMinimum": 0},
        "A": _MATRIX,
        "B": _MATRIX,
        "C": _MATRIX,
        "W": _MATRIX,
        "R": _MATRIX,
        "sensor_names": {"type": "array", "items": {"type": "string"}},
        "detector": {
            "type": "object",
            "required": ["kind", "beta"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sprt", "windowed"]},
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "threshold_h": {"type": "number", "exclusiveMinimum": 0},
                "coefficients": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "budget": {"enum": ["cumulative", "stationary"]},
            },
        },
        "scenario": {
            "type": "object",
            "required": ["epsilon"],
            "additionalProperties": False,
            "properties": {
                "compromised": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                "gamma": {"type": "number", "minimum": 0},
            },
        },
        "policy": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["none", "global", "sensorwise"]},
                "f": {"type": "integer", "minimum": 1},
                "L": {"type": "integer", "minimum": 1},
                "t0": {"type": "integer", "minimum": 2},
                "schedules": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["sensor", "f", "L", "t0"],
                        "additionalProperties": False,
                        "properties": {
                            "sensor": {"type": "string"},
                            "f": {"type": "integer", "minimum": 1},
                            "L": {"type": "integer", "minimum": 1},
                            "t0": {"type": "integer", "minimum": 2},
                        },
                    },
                },
            },
        },
        "safe_threshold": {"type": "number", "exclusiveMinimum": 0},
    },
}


@dataclass(frozen=True)
class ModelBundle:
    """Everything a model file describes, with the plant already in discrete time."""

    model: PlantModel
    detector: DetectorSpec
    scenario: AttackScenario
    policy: EnforcementPolicy | None = None
    safe_threshold: float | None = None
    name: str = ""
    notes: str = ""
    continuous: bool = False
    sampling_period: float | None = None
    continuous_A: np.ndarray | None = field(default=None, compare=False)
    continuous_B: np.ndarray | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        same_ct = all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in ((self.continuous_A, other.continuous_A), (self.continuous_B, other.continuous_B))
        )
        keys = ("model", "detector", "scenario", "policy", "safe_threshold", "name", "notes",
                "continuous", "sampling_period")
        return same_ct and all(getattr(self, k) == getattr(other, k) for k in keys)

    __hash__ = None


def _matrix_from_json(obj, name):
    rows, cols = obj["shape"]
    data = obj["data"]
    if len(data) != rows * cols:
        raise ValidationError(f"{name}: shape {rows}x{cols} needs {rows * cols} entries, got {len(data)}")
    return np.array(data, dtype=float).reshape(rows, cols)


def _matrix_to_json(M):
    M = np.asarray(M, dtype=float)
    return {"shape": list(M.shape), "data": [float(v) for v in M.ravel()]}


def _format_schema_error(err):
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"field {where}: {err.message}"


def bundle_from_dict(doc):
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ValidationError("; ".join(_format_schema_error(e) for e in errors))
    mats = {k: _matrix_from_json(doc[k], k) for k in "ABCWR"}
    continuous = bool(doc.get("continuous", False))
    Ts = doc.get("sampling_period")
    ct_A = ct_B = None
    A, B = mats["A"], mats["B"]
    if continuous:
        if Ts is None:
            raise ValidationError("field sampling_period: required for continuous-time models")
        ct_A, ct_B = A, B
        A, B = discretize_zoh(A, B, Ts)
    names = tuple(doc.get("sensor_names", ()))
    model = PlantModel(A, B, mats["C"], mats["W"], mats["R"], names)
    det = doc["detector"]
    if det["kind"] == "sprt":
        detector = DetectorSpec.sprt(det["beta"], model.p, det.get("budget", "cumulative"))
        if "threshold_h" in det and not math.isclose(det["threshold_h"], detector.threshold_h, rel_tol=1e-9):
            detector = DetectorSpec("sprt", det["threshold_h"], det["beta"], model.p, (1.0,), det.get("budget", "cumulative"))
    else:
        coeffs = tuple(det.get("coefficients", [1.0]))
        if "threshold_h" in det:
            detector = DetectorSpec("windowed", det["threshold_h"], det["beta"], model.p, coeffs)
        elif coeffs == (1.0,):
            detector = DetectorSpec.chi_square(det["beta"], model.p)
        else:
            raise ValidationError("field detector/threshold_h: required for weighted windows")
    sc = doc["scenario"]
    comp = tuple(model.sensor_index(s) for s in sc.get("compromised", model.sensor_names))
    scenario = AttackScenario(comp, sc["epsilon"], sc.get("gamma", 0.0))
    policy = None
    if "policy" in doc:
        policy = policy_from_dict(doc["policy"], model)
    return ModelBundle(
        model=model,
        detector=detector,
        scenario=scenario,
        policy=policy,
        safe_threshold=doc.get("safe_threshold"),
        name=doc.get("name", ""),
        notes=doc.get("notes", ""),
        continuous=continuous,
        sampling_period=Ts,
        continuous_A=ct_A,
        continuous_B=ct_B,
    )


def policy_from_dict(doc, model):
    kind = doc["kind"]
    if kind == "none":
        return EnforcementPolicy.none()
    if kind == "global":
        for key in ("f", "L"):
            if key not in doc:
                raise ValidationError(f"field policy/{key}: required for global policies")
        return EnforcementPolicy.periodic(doc["f"], doc["L"], doc.get("t0"))
    schedules = [
        SensorSchedule(model.sensor_index(s["sensor"]), s["f"], s["L"], s["t0"]) for s in doc.get("schedules", [])
    ]
    return EnforcementPolicy.sensorwise(schedules)


def policy_to_dict(policy, model):
    if policy.kind == "none":
        return {"kind": "none"}
    if policy.kind == "global":
        return {"kind": "global", "f": policy.f, "L": policy.L, "t0": policy.t0}
    return {
        "kind": "sensorwise",
        "schedules": [
            {"sensor": model.sensor_names[s.sensor], "f": s.f, "L": s.L, "t0": s.t0} for s in policy.schedules
        ],
    }


def bundle_to_dict(bundle):
    m = bundle.model
    doc = {"schema_version": SCHEMA_VERSION}
    if bundle.name:
        doc["name"] = bundle.name
    if bundle.notes:
        doc["notes"] = bundle.notes
    if bundle.continuous:
        doc["continuous"] = True
        doc["A"] = _matrix_to_json(bundle.continuous_A)
        doc["B"] = _matrix_to_json(bundle.continuous_B)
    else:
        doc["A"] = _matrix_to_json(m.A)
        doc["B"] = _matrix_to_json(m.B)
    if bundle.sampling_period is not None:
        doc["sampling_period"] = bundle.sampling_period
    doc["C"] = _matrix_to_json(m.C)
    doc["W"] = _matrix_to_json(m.W)
    doc["R"] = _matrix_to_json(m.R)
    doc["sensor_names"] = list(m.sensor_names)
    det = bundle.detector
    det_doc = {"kind": det.kind, "beta": det.beta, "threshold_h": det.threshold_h}
    if det.kind == "sprt":
        det_doc["budget"] = det.budget
    else:
        det_doc["coefficients"] = list(det.coefficients)
    doc["detector"] = det_doc
    sc = bundle.scenario
    doc["scenario"] = {
        "compromised": [m.sensor_names[i] for i in sc.compromised],
        "epsilon": sc.epsilon,
        "gamma": sc.gamma,
    }
    if bundle.policy is not None:
        doc["policy"] = policy_to_dict(bundle.policy, m)
    if bundle.safe_threshold is not None:
        doc["safe_threshold"] = bundle.safe_threshold
    return doc


def _load_json(text, source):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def parse_model(path):
    """Load and validate a model file; ``builtin:<name>`` loads a shipped fixture."""
    path = str(path)
    if path.startswith("builtin:"):
        return load_fixture(path.split(":", 1)[1])
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read model file {path}: {exc.strerror}") from None
    return bundle_from_dict(_load_json(text, path))


def dump_model(bundle, path=None):
    text = json.dumps(bundle_to_dict(bundle), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_fixture(name):
    if name not in FIXTURES:
        raise ValidationError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    text = resources.files("integrity_reach").joinpath("fixtures").joinpath(f"{name}.json").read_text()
    return bundle_from_dict(_load_json(text, f"builtin:{name}"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def render_report(report, fmt="json"):
    """Serialize a report dict. CSV output writes ``report["table"]`` with a header row."""
    if fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, **report}
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        table = report.get("table")
        if not table:
            raise ValidationError("report has no tabular section for CSV output")
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table["columns"])
        for row in table["rows"]:
            writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
        return buf.getvalue()
    raise ValidationError(f"unknown report format {fmt!r}")


def emit_report(report, fmt="json", path=None):
    text = render_report(report, fmt)
    if path is not None and str(path) != "-":
        Path(path).write_text(text)
    return text


__all__ = [
    "FIXTURES",
    "MODEL_SCHEMA",
    "ModelBundle",
    "SCHEMA_VERSION",
    "bundle_from_dict",
    "bundle_to_dict",
    "discretize_zoh",
    "dump_model",
    "emit_report",
    "load_fixture",
    "parse_model",
    "policy_from_dict",
    "render_report",
]
