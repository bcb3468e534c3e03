"""Probability models: Gaussian/Laplacian/Logistic primitives, GMM and GLLMM
mixtures, discretized PMFs, quantized CDF tables and the static factorized
prior for the hyper-latent.

All mixture evaluation is done with elementwise ufuncs plus fixed-length,
fixed-order component sums, so a value computed for one element inside a big
batch is bit-identical to the same element evaluated alone. The two-pass and
serial decoders rely on this.

Raw parameter planes coming out of the estimation networks are laid out
channel-blocked. For a latent with C channels:

  GMM (9C planes):    [0,3C) weight logits, [3C,6C) means, [6C,9C) raw scales,
                      block index k*C + c for component k of channel c.
  GLLMM (30C planes): [0,3C) family logits (f*C + c), then weight logits,
                      means, raw scales, each 9C wide with index (f*3+k)*C + c
                      for family f (Gaussian, Laplacian, Logistic), component k.

Weights are softmax-normalized within each group of 3; scales go through a
softplus and are clamped to SCALE_MIN.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

SCALE_MIN = 1e-3
_SQRT2 = np.sqrt(2.0)


def gaussian_cdf(x, mu, sigma):
    """Exact normal CDF via the complementary error function."""
    return 0.5 * special.erfc(-(np.asarray(x, dtype=np.float64) - mu) / (sigma * _SQRT2))


def laplacian_cdf(x, mu, b):
    t = (np.asarray(x, dtype=np.float64) - mu) / b
    return np.where(t < 0, 0.5 * np.exp(np.minimum(t, 0.0)),
                    1.0 - 0.5 * np.exp(-np.maximum(t, 0.0)))


def logistic_cdf(x, mu, s):
    return special.expit((np.asarray(x, dtype=np.float64) - mu) / s)


_FAMILY_CDFS = (gaussian_cdf, laplacian_cdf, logistic_cdf)


def _softmax3(logits):
    """Softmax over axis 0 of length 3, with an explicit fixed-order sum."""
    m = np.max(logits, axis=0)
    e = np.exp(logits - m)
    return e / (e[0] + e[1] + e[2])


def _softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


@dataclass(frozen=True)
class GmmParams:
    """3-component Gaussian mixture, arrays shaped (3,) + spatial."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def from_raw(cls, raw, channels):
        """Normalize raw plane stack (9C, H, W) into per-channel parameters,
        returned with shape (3, C, H, W)."""
        c = channels
        if raw.shape[0] != 9 * c:
            raise ValueError(f"GMM planes: expected {9 * c} channels, got {raw.shape[0]}")
        sp = raw.shape[1:]
        raw = raw.astype(np.float64)
        w = _softmax3(raw[0:3 * c].reshape((3, c) + sp))
        mu = raw[3 * c:6 * c].reshape((3, c) + sp)
        sc = np.maximum(_softplus(raw[6 * c:9 * c].reshape((3, c) + sp)), SCALE_MIN)
        return cls(weights=w, means=mu, scales=sc)

    @property
    def spatial_shape(self):
        return self.weights.shape[1:]

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        acc = self.weights[0] * gaussian_cdf(x, self.means[0], self.scales[0])
        acc = acc + self.weights[1] * gaussian_cdf(x, self.means[1], self.scales[1])
        acc = acc + self.weights[2] * gaussian_cdf(x, self.means[2], self.scales[2])
        return acc

    def pick(self, index):
        """Single-element view at flat spatial index (for the serial decoder)."""
        sel = (slice(None),) + np.unravel_index(index, self.weights.shape[1:])
        return GmmParams(self.weights[sel].reshape(3, 1),
                         self.means[sel].reshape(3, 1),
                         self.scales[sel].reshape(3, 1))

    def slice_channel(self, c, mask):
        """Parameters of channel c at the masked spatial positions, raster order."""
        return GmmParams(self.weights[:, c][:, mask],
                         self.means[:, c][:, mask],
                         self.scales[:, c][:, mask])


@dataclass(frozen=True)
class GllmmParams:
    """Gaussian-Laplacian-Logistic mixture: 3 families x 3 components.

    family_weights has shape (3,) + spatial; the per-family arrays are
    (3, 3) + spatial with family as the leading axis.
    """

    family_weights: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def from_raw(cls, raw, channels):
        c = channels
        if raw.shape[0] != 30 * c:
            raise ValueError(f"GLLMM planes: expected {30 * c} channels, got {raw.shape[0]}")
        sp = raw.shape[1:]
        raw = raw.astype(np.float64)
        fw = _softmax3(raw[0:3 * c].reshape((3, c) + sp))
        w9 = raw[3 * c:12 * c].reshape((3, 3, c) + sp)
        w = np.stack([_softmax3(w9[f]) for f in range(3)])
        mu = raw[12 * c:21 * c].reshape((3, 3, c) + sp)
        sc = np.maximum(_softplus(raw[21 * c:30 * c].reshape((3, 3, c) + sp)), SCALE_MIN)
        return cls(family_weights=fw, weights=w, means=mu, scales=sc)

    @property
    def spatial_shape(self):
        return self.family_weights.shape[1:]

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        acc = None
        for f, fcdf in enumerate(_FAMILY_CDFS):
            fam = self.weights[f, 0] * fcdf(x, self.means[f, 0], self.scales[f, 0])
            fam = fam + self.weights[f, 1] * fcdf(x, self.means[f, 1], self.scales[f, 1])
            fam = fam + self.weights[f, 2] * fcdf(x, self.means[f, 2], self.scales[f, 2])
            term = self.family_weights[f] * fam
            acc = term if acc is None else acc + term
        return acc

    def pick(self, index):
        sp = self.family_weights.shape[1:]
        sel1 = (slice(None),) + np.unravel_index(index, sp)
        sel2 = (slice(None), slice(None)) + np.unravel_index(index, sp)
        return GllmmParams(self.family_weights[sel1].reshape(3, 1),
                           self.weights[sel2].reshape(3, 3, 1),
                           self.means[sel2].reshape(3, 3, 1),
                           self.scales[sel2].reshape(3, 3, 1))

    def slice_channel(self, c, mask):
        """Parameters of channel c at the masked spatial positions, raster order."""
        return GllmmParams(self.family_weights[:, c][:, mask],
                           self.weights[:, :, c][:, :, mask],
                           self.means[:, :, c][:, :, mask],
                           self.scales[:, :, c][:, :, mask])


def mixture_pmf(params, k):
    """P(symbol k) = C(k + 1/2) - C(k - 1/2) under the mixture CDF."""
    k = np.asarray(k, dtype=np.float64)
    return np.maximum(params.cdf(k + 0.5) - params.cdf(k - 0.5), 0.0)


@dataclass(frozen=True)
class QuantizedCdf:
    """Integer CDF table over symbol support [lo, hi] at ``precision`` bits.

    ``cum`` has hi-lo+2 entries: cum[0] = 0, strictly increasing,
    cum[-1] = 2**precision (every symbol keeps mass >= 1).
    """

    lo: int
    hi: int
    precision: int
    cum: np.ndarray

    def validate(self):
        total = 1 << self.precision
        if self.hi < self.lo:
            raise ValueError("empty support")
        if len(self.cum) != self.hi - self.lo + 2:
            raise ValueError("table length does not match support")
        if int(self.cum[0]) != 0 or int(self.cum[-1]) != total:
            raise ValueError("table endpoints must be 0 and 2^precision")
        if np.any(np.diff(self.cum.astype(np.int64)) < 1):
            raise ValueError("table must be strictly increasing")
        return self

    def mass(self, symbol):
        i = np.asarray(symbol) - self.lo
        c = self.cum.astype(np.int64)
        return c[i + 1] - c[i]

    def bits(self, symbols):
        """Code length of symbols under this table, in bits."""
        m = self.mass(symbols).astype(np.float64)
        return float(np.sum(-np.log2(m / (1 << self.precision))))


def quantize_pmf_batch(pmf, precision):
    """Turn PMF rows (n, S) into integer mass rows summing to 2**precision.

    Masses are floor(pmf * 2^P) clamped to >= 1; the rounding surplus or
    deficit is settled against the largest bucket of each row (iterating to
    the next-largest in the rare case the largest cannot absorb it).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n, s = pmf.shape
    total = 1 << precision
    if s > total:
        raise ValueError(f"support of {s} symbols too wide for {precision}-bit tables")
    norm = pmf.sum(axis=1, keepdims=True)
    good = (norm > 0) & np.isfinite(norm)
    pmf = np.where(good, pmf / np.where(good, norm, 1.0), 1.0 / s)
    m = np.floor(pmf * total).astype(np.int64)
    np.maximum(m, 1, out=m)
    delta = total - m.sum(axis=1)
    idx = np.argmax(m, axis=1)
    rows = np.arange(n)
    fixed = m[rows, idx] + delta
    easy = fixed >= 1
    m[rows[easy], idx[easy]] = fixed[easy]
    for r in np.nonzero(~easy)[0]:
        need = -int(delta[r])  # mass to remove
        order = np.argsort(-m[r], kind="stable")
        for j in order:
            take = min(need, int(m[r, j]) - 1)
            m[r, j] -= take
            need -= take
            if need == 0:
                break
    return m


def build_quantized_cdf(pmf, lo, hi, precision=16):
    """Quantize one PMF (already tail-folded) over [lo, hi] into a table."""
    masses = quantize_pmf_batch(np.asarray(pmf, dtype=np.float64)[None, :], precision)[0]
    cum = np.zeros(len(masses) + 1, dtype=np.uint32)
    cum[1:] = np.cumsum(masses)
    return QuantizedCdf(lo=int(lo), hi=int(hi), precision=precision, cum=cum)


def mixture_pmf_table(params, lo, hi):
    """Discretized PMF rows over [lo, hi] with out-of-support tails folded
    into the boundary symbols. Returns (n_elements, hi-lo+1) float64 where
    elements run over the flattened spatial shape of ``params``."""
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    sp = params.spatial_shape
    n = int(np.prod(sp)) if sp else 1
    s = hi - lo + 1
    out = np.empty((s, n), dtype=np.float64)
    prev = params.cdf(edges[0]).reshape(-1)
    first = prev.copy()
    for j in range(s):
        cur = params.cdf(edges[j + 1]).reshape(-1)
        out[j] = np.maximum(cur - prev, 0.0)
        prev = cur
    out[0] += first           # mass below lo - 1/2
    out[-1] += 1.0 - prev     # mass above hi + 1/2
    return out.T


def build_tables(params, lo, hi, precision=16):
    """Per-element quantized tables: (n_elements, S+1) uint32 cumulative rows."""
    masses = quantize_pmf_batch(mixture_pmf_table(params, lo, hi), precision)
    n, s = masses.shape
    cum = np.zeros((n, s + 1), dtype=np.uint32)
    cum[:, 1:] = np.cumsum(masses, axis=1)
    return cum


def table_bits(cum_rows, rebased_syms, precision=16):
    """Code length in bits of symbols under per-element quantized tables."""
    rows = np.arange(len(rebased_syms))
    c = cum_rows.astype(np.int64)
    m = c[rows, np.asarray(rebased_syms) + 1] - c[rows, rebased_syms]
    m = np.maximum(m, 1)
    return float(np.sum(-np.log2(m.astype(np.float64) / (1 << precision))))


def pmf_bits(model, symbols):
    """Theoretical code length sum(-log2 P(symbol)) in bits.

    ``model`` is a mixture parameter object (analytic PMF) or a QuantizedCdf
    (probabilities are table masses, floored at one mass unit).
    """
    symbols = np.asarray(symbols)
    if isinstance(model, QuantizedCdf):
        return model.bits(symbols)
    p = mixture_pmf(model, symbols.astype(np.float64))
    p = np.maximum(p, np.finfo(np.float64).tiny)
    return float(np.sum(-np.log2(p)))


@dataclass(frozen=True)
class FactorizedPrior:
    """Static per-channel quantized CDFs for the hyper-latent."""

    channels: tuple

    def __len__(self):
        return len(self.channels)

    def validate(self):
        for t in self.channels:
            t.validate()
        return self

    def clip(self, z):
        """Clamp integer symbols into each channel's support (codability guard)."""
        out = np.empty_like(z)
        for c, t in enumerate(self.channels):
            out[c] = np.clip(z[c], t.lo, t.hi)
        return out

    def coder_arrays(self, shape):
        """flat/starts/lens arrays for coding a (C, h, w) symbol grid."""
        c, h, w = shape
        if c != len(self.channels):
            raise ValueError(f"prior has {len(self.channels)} channels, latent has {c}")
        flat = np.concatenate([t.cum for t in self.channels]).astype(np.uint32)
        lens = np.empty(c * h * w, dtype=np.int32)
        starts = np.empty(c * h * w, dtype=np.int64)
        off = 0
        pos = 0
        for t in self.channels:
            ln = len(t.cum)
            lens[pos:pos + h * w] = ln
            starts[pos:pos + h * w] = off
            off += ln
            pos += h * w
        return flat, starts, lens

    def rebase(self, z):
        los = np.array([t.lo for t in self.channels], dtype=np.int64)
        return (z.reshape(len(self.channels), -1) - los[:, None]).reshape(-1)

    def bits(self, z):
        """Table-mass code length of a (C, h, w) symbol grid."""
        total = 0.0
        for c, t in enumerate(self.channels):
            total += t.bits(z[c].reshape(-1))
        return total
