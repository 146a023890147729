"""Linear refinement models mapping stage-one images to refined images.

Two predictors, both fitted from column-paired snapshot matrices
X, Y of shape (n^2, M):

* principal-component regression: center X and Y by their per-block means,
  stack them, keep the leading left singular vectors of the stack, and
  regress through the input block of the joint basis;
* best-fit linear snapshot operator: truncated SVD of the raw inputs and a
  least-squares linear map onto the outputs, applied in the reduced
  coefficient space.

Model files are a directory with a JSON manifest plus one raw float64
little-endian array blob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

PINV_TOLERANCE = 1e-10  # relative singular-value cutoff, documented default

MODEL_FORMAT_VERSION = 1


def _as_snapshots(m, name) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D (features x samples), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class PcaModel:
    retained: int
    input_mean: np.ndarray
    output_mean: np.ndarray
    input_basis: np.ndarray   # (n^2, retained) block of the joint orthonormal basis
    output_basis: np.ndarray  # (n^2, retained) block of the joint orthonormal basis
    pinv_tol: float = PINV_TOLERANCE

    def predict(self, x: np.ndarray) -> np.ndarray:
        return pca_predict(self, x)


def pca_fit(inputs, outputs, n_components: int, pinv_tol: float = PINV_TOLERANCE) -> PcaModel:
    """Fit the joint-basis regression model.

    The requested component count is clamped to the numerical rank of the
    stacked centered data (singular values above ``pinv_tol`` times the
    largest), and never exceeds min(2 n^2, M).
    """
    X = _as_snapshots(inputs, "inputs")
    Y = _as_snapshots(outputs, "outputs")
    if X.shape != Y.shape:
        raise ValueError(f"input/output shape mismatch: {X.shape} vs {Y.shape}")
    d, m = X.shape
    if m < 2:
        raise ValueError(f"need at least two sample pairs, got {m}")
    if n_components < 1:
        raise ValueError("need at least one component")

    x_mean = X.mean(axis=1)
    y_mean = Y.mean(axis=1)
    stacked = np.vstack([X - x_mean[:, None], Y - y_mean[:, None]])
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    if s[0] == 0.0:
        raise ValueError("degenerate all-zero dataset")
    rank = int(np.sum(s > pinv_tol * s[0]))
    retained = min(n_components, rank)
    basis = u[:, :retained]
    return PcaModel(retained=retained, input_mean=x_mean, output_mean=y_mean,
                    input_basis=basis[:d], output_basis=basis[d:], pinv_tol=pinv_tol)


def pca_predict(model: PcaModel, x) -> np.ndarray:
    """output_mean + output_basis pinv(input_basis) (x - input_mean)."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    if xv.size != model.input_mean.size:
        raise ValueError(f"input length {xv.size} != {model.input_mean.size}")
    coeffs = _pinv_apply(model.input_basis, xv - model.input_mean, model.pinv_tol)
    return model.output_mean + model.output_basis @ coeffs


def _pinv_apply(mat: np.ndarray, vec: np.ndarray, tol: float) -> np.ndarray:
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    keep = s > tol * s[0]
    return vt[keep].T @ ((u[:, keep].T @ vec) / s[keep])


@dataclass(frozen=True)
class DmdModel:
    retained: int
    input_modes: np.ndarray        # (n^2, retained) left singular vectors of X
    prediction_factor: np.ndarray  # (n^2, retained) = Y V_s Sigma_s^{-1}
    rank_tol: float = PINV_TOLERANCE

    def predict(self, x: np.ndarray) -> np.ndarray:
        return dmd_predict(self, x)


def dmd_fit(inputs, outputs, n_components: int, rank_tol: float = PINV_TOLERANCE) -> DmdModel:
    """Fit the best-fit linear snapshot operator on raw (uncentered) data.

    Truncation rank is clamped to the numerical rank of the inputs.
    """
    X = _as_snapshots(inputs, "inputs")
    Y = _as_snapshots(outputs, "outputs")
    if X.shape != Y.shape:
        raise ValueError(f"input/output shape mismatch: {X.shape} vs {Y.shape}")
    if X.shape[1] < 1:
        raise ValueError("need at least one sample pair")
    if n_components < 1:
        raise ValueError("need at least one component")
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[0] == 0.0:
        raise ValueError("all-zero input matrix")
    rank = int(np.sum(s > rank_tol * s[0]))
    retained = min(n_components, rank)
    u_s = u[:, :retained]
    factor = Y @ (vt[:retained].T / s[:retained])
    return DmdModel(retained=retained, input_modes=u_s, prediction_factor=factor,
                    rank_tol=rank_tol)


def dmd_predict(model: DmdModel, x) -> np.ndarray:
    """prediction_factor (input_modes^T x): project, then map to outputs."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    if xv.size != model.input_modes.shape[0]:
        raise ValueError(f"input length {xv.size} != {model.input_modes.shape[0]}")
    return model.prediction_factor @ (model.input_modes.T @ xv)


def reduced_operator(model: DmdModel) -> np.ndarray:
    """Materialize the retained x retained coefficient-space operator
    (input_modes^T prediction_factor).  Useful for diagnostics; prediction
    itself goes through prediction_factor @ (input_modes^T x)."""
    return model.input_modes.T @ model.prediction_factor


# ---------------------------------------------------------------------------
# serialization

_MODEL_KINDS = {"pca": PcaModel, "dmd": DmdModel}


def save_model(model, path) -> None:
    """Write a model directory: manifest.json + arrays.bin (LE float64)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(model, PcaModel):
        kind = "pca"
        arrays = {
            "input_mean": model.input_mean,
            "output_mean": model.output_mean,
            "input_basis": model.input_basis,
            "output_basis": model.output_basis,
        }
        extra = {"retained": model.retained, "pinv_tol": model.pinv_tol}
    elif isinstance(model, DmdModel):
        kind = "dmd"
        arrays = {
            "input_modes": model.input_modes,
            "prediction_factor": model.prediction_factor,
        }
        extra = {"retained": model.retained, "rank_tol": model.rank_tol}
    else:
        raise ValueError(f"unknown model type {type(model).__name__}")

    blob = bytearray()
    layout = {}
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        layout[name] = {"offset": len(blob), "shape": list(a.shape)}
        blob += a.tobytes(order="C")
    (path / "arrays.bin").write_bytes(bytes(blob))
    manifest = {"format_version": MODEL_FORMAT_VERSION, "kind": kind,
                "layout": layout, **extra}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_model(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "arrays.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read model at {path}: {exc}") from exc
    if manifest.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataFormatError(
            f"model format version {manifest.get('format_version')} unsupported"
        )
    arrays = {}
    for name, spec in manifest["layout"].items():
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        start = spec["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        arrays[name] = arr.reshape(shape).copy()
    if manifest["kind"] == "pca":
        return PcaModel(retained=manifest["retained"], pinv_tol=manifest["pinv_tol"], **arrays)
    if manifest["kind"] == "dmd":
        return DmdModel(retained=manifest["retained"], rank_tol=manifest["rank_tol"], **arrays)
    raise DataFormatError(f"unknown model kind {manifest['kind']!r}")
