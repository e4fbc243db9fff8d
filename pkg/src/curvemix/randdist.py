"""Random-variate primitives and log-densities used across the sampler.

Everything takes an explicit numpy Generator so chains are reproducible;
`rng_stream(seed, stream_id)` builds independent generators for chains.

The two nontrivial samplers:

* `sample_trunc_invgamma` — inverse-gamma restricted to (0, upper), drawn by
  adaptive rejection sampling after the transform w = log(xi*x + 1), which
  makes the log-density concave for xi > (a+1)/b - 2/upper (we use
  xi = 2(a+1)/b). The bounded support keeps the piecewise-exponential
  envelope integrable regardless of tangent slopes.

* `sample_polya_gamma_1` — exact PG(1, c) via the alternating-series
  rejection sampler: draw from a two-piece proposal (truncated
  inverse-Gaussian head, exponential tail split at t = 0.64) for the
  tilted Jacobi variable with tilt z = |c|/2, accept through the partial
  sums of the series expansion, and return x/4.
"""

import math

import numpy as np
from scipy.linalg.lapack import dpotrf as _dpotrf, dpotrs as _dpotrs, dtrtrs as _dtrtrs
from scipy.special import gammaincc, gammainccinv, gammaln, multigammaln

LOG2PI = math.log(2.0 * math.pi)

# Quantiles used to seed the adaptive-rejection hull for the truncated
# inverse-gamma sampler; gammainccinv(a, q) maps them to inverse-gamma
# quantiles as scale / gammainccinv(shape, q).
_ARS_INIT_QUANTILES = np.array([0.05, 0.3, 0.5, 0.7, 0.95])


def rng_stream(seed, stream_id=0):
    """Independent Generator for (seed, stream_id); same pair -> same stream."""
    return np.random.default_rng([int(seed), int(stream_id)])


# ---------------------------------------------------------------------------
# Gaussian, precision parameterization
# ---------------------------------------------------------------------------

def chol_lower(a, overwrite_a=False):
    """Lower Cholesky factor via LAPACK. Entries above the diagonal are
    left unspecified; use only with routines that read the lower part."""
    L, bad = _dpotrf(a, lower=1, clean=0, overwrite_a=overwrite_a)
    if bad:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return L


def sample_mvn_prec(mean, prec, rng):
    """Draw N(mean, prec^{-1}) from the precision matrix."""
    L = chol_lower(prec)
    z = rng.standard_normal(len(mean))
    x, _ = _dtrtrs(L, z, lower=1, trans=1, overwrite_b=1)
    return np.asarray(mean) + x


def sample_mvn_prec_info(info, prec, rng):
    """Draw N(prec^{-1} info, prec^{-1}); returns (draw, mean)."""
    L = chol_lower(prec)
    mean, _ = _dpotrs(L, np.asarray(info), lower=1)
    z = rng.standard_normal(len(mean))
    x, _ = _dtrtrs(L, z, lower=1, trans=1, overwrite_b=1)
    return mean + x, mean


def mvn_logpdf_prec(x, mean, prec):
    """log N(x; mean, prec^{-1})."""
    d = x - mean
    L = chol_lower(prec)
    half_logdet = np.log(np.diag(L)).sum()
    return -0.5 * len(d) * LOG2PI + half_logdet - 0.5 * d @ prec @ d


# ---------------------------------------------------------------------------
# Inverse gamma (plain and truncated) and relatives
# ---------------------------------------------------------------------------

def sample_invgamma(shape, scale, rng, size=None):
    """IG(shape, scale) with density ~ x^-(shape+1) exp(-scale/x)."""
    return np.asarray(scale) / rng.gamma(shape, 1.0, size=size)

def invgamma_logpdf(x, shape, scale):
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * math.log(x) - scale / x


def gamma_logpdf_rate(x, shape, rate):
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x


def sqrt_uniform_logpdf(v, upper):
    """Density of v = s^2 when s ~ U(0, upper): v^{-1/2} / (2 upper) on (0, upper^2)."""
    if v <= 0.0 or v >= upper * upper:
        return -math.inf
    return -0.5 * math.log(v) - math.log(2.0 * upper)


def sample_sqrt_uniform(upper, rng, size=None):
    """Draw v = s^2 with s ~ U(0, upper)."""
    s = rng.uniform(0.0, upper, size=size)
    return s * s


def trunc_invgamma_logpdf(x, shape, scale, upper):
    """Normalized log-density of IG(shape, scale) restricted to (0, upper).

    P(X <= upper) equals the regularized upper incomplete gamma Q(shape,
    scale/upper), so the normalizer is analytic.
    """
    if x <= 0.0 or x >= upper:
        return -math.inf
    norm = gammaincc(shape, scale / upper)
    return (
        shape * math.log(scale)
        - gammaln(shape)
        - (shape + 1.0) * math.log(x)
        - scale / x
        - math.log(norm)
    )


def _log_expm1_ratio(s, delta):
    """log((exp(s*delta) - 1) / s) for delta > 0, any sign of s."""
    x = s * delta
    if abs(x) < 1e-12:
        return math.log(delta)
    if x > 0:
        # log(expm1(x)) stable for large x
        lx = x + math.log1p(-math.exp(-x)) if x > 30 else math.log(math.expm1(x))
        return lx - math.log(s)
    return math.log(-math.expm1(x)) - math.log(-s)


class _Hull:
    """Piecewise-linear upper hull for ARS on a bounded interval."""

    def __init__(self, ws, hs, dhs, lo, hi):
        order = sorted(range(len(ws)), key=lambda i: ws[i])
        self.w = [ws[i] for i in order]
        self.h = [hs[i] for i in order]
        self.dh = [dhs[i] for i in order]
        self.lo = lo
        self.hi = hi
        self._rebuild()

    def _rebuild(self):
        w, h, dh = self.w, self.h, self.dh
        k = len(w)
        z = [self.lo]
        for i in range(k - 1):
            denom = dh[i] - dh[i + 1]
            if abs(denom) < 1e-14:
                zi = 0.5 * (w[i] + w[i + 1])
            else:
                zi = (h[i + 1] - h[i] - w[i + 1] * dh[i + 1] + w[i] * dh[i]) / denom
            zi = min(max(zi, w[i]), w[i + 1])
            z.append(zi)
        z.append(self.hi)
        self.z = z
        # log segment masses
        logm = []
        for i in range(k):
            ua = h[i] + (z[i] - w[i]) * dh[i]
            logm.append(ua + _log_expm1_ratio(dh[i], z[i + 1] - z[i]) if z[i + 1] > z[i] else -math.inf)
        self.logm = logm
        mx = max(logm)
        self.seg_p = [math.exp(v - mx) for v in logm]
        tot = sum(self.seg_p)
        self.seg_p = [v / tot for v in self.seg_p]

    def insert(self, wn, hn, dhn):
        i = 0
        while i < len(self.w) and self.w[i] < wn:
            i += 1
        self.w.insert(i, wn)
        self.h.insert(i, hn)
        self.dh.insert(i, dhn)
        self._rebuild()

    def upper(self, x):
        # segment containing x
        i = 0
        z = self.z
        while i < len(self.w) - 1 and x > z[i + 1]:
            i += 1
        return self.h[i] + (x - self.w[i]) * self.dh[i]

    def squeeze(self, x):
        w, h = self.w, self.h
        if x < w[0] or x > w[-1]:
            return -math.inf
        i = 0
        while x > w[i + 1]:
            i += 1
        t = (x - w[i]) / (w[i + 1] - w[i]) if w[i + 1] > w[i] else 0.0
        return h[i] + t * (h[i + 1] - h[i])

    def sample(self, rng):
        u = rng.random()
        i = 0
        acc = self.seg_p[0]
        while acc < u and i < len(self.seg_p) - 1:
            i += 1
            acc += self.seg_p[i]
        s = self.dh[i]
        a, b = self.z[i], self.z[i + 1]
        v = rng.random()
        if abs(s * (b - a)) < 1e-12:
            return a + v * (b - a)
        return a + math.log1p(v * math.expm1(s * (b - a))) / s


def sample_trunc_invgamma(shape, scale, upper, rng, xi=None, max_updates=10_000):
    """Draw IG(shape, scale) restricted to (0, upper) by ARS on w = log(xi*x + 1)."""
    a = float(shape)
    b = float(scale)
    L = float(upper)
    if a <= 0.0 or b <= 0.0 or L <= 0.0:
        raise ValueError(f"need shape, scale, upper > 0; got {a}, {b}, {L}")
    if xi is None:
        xi = 2.0 * (a + 1.0) / b
    if xi <= (a + 1.0) / b - 2.0 / L:
        raise ValueError("xi too small for a log-concave transformed density")

    w_hi = math.log1p(xi * L)

    def ell(w):
        e = math.expm1(w)
        return -(a + 1.0) * math.log(e) + w - b * xi / e

    def dell(w):
        e = math.expm1(w)
        ew = e + 1.0
        return -(a + 1.0) * ew / e + 1.0 + b * xi * ew / (e * e)

    # initial abscissae: untruncated quantiles pushed through the transform
    qs = b / gammainccinv(a, _ARS_INIT_QUANTILES)
    eps = w_hi * 1e-9
    ws = []
    for xq in qs:
        if not np.isfinite(xq) or xq <= 0:
            continue
        wq = math.log1p(xi * min(xq, L * (1 - 1e-9)))
        wq = min(max(wq, eps), w_hi - eps)
        if all(abs(wq - o) > 1e-12 for o in ws):
            ws.append(wq)
    if len(ws) < 3:
        ws = [w_hi * f for f in (0.1, 0.3, 0.5, 0.7, 0.9)]
    hull = _Hull(ws, [ell(w) for w in ws], [dell(w) for w in ws], 0.0, w_hi)

    for _ in range(max_updates):
        w = hull.sample(rng)
        w = min(max(w, eps), w_hi - eps)
        logv = math.log(rng.random())
        uw = hull.upper(w)
        if logv <= hull.squeeze(w) - uw:
            return math.expm1(w) / xi
        hw = ell(w)
        if logv <= hw - uw:
            return math.expm1(w) / xi
        hull.insert(w, hw, dell(w))
    raise RuntimeError("ARS failed to accept within the update cap")


def sample_trunc_invgamma_rejection(shape, scale, upper, rng, max_tries=10_000_000):
    """Plain rejection oracle: draw IG(shape, scale) until it lands in (0, upper).

    Independent of the ARS path; used to validate it. Falls over (by design)
    when the truncation probability is tiny.
    """
    for _ in range(max_tries):
        x = float(scale) / rng.gamma(float(shape))
        if x < upper:
            return x
    raise RuntimeError("rejection oracle exhausted its tries")


# ---------------------------------------------------------------------------
# Polya-Gamma PG(1, c), exact
# ---------------------------------------------------------------------------

_PG_T = 0.64


def _pg_an(n, x):
    """Series coefficient a_n(x) of the Jacobi-type density, piecewise in x."""
    np5 = n + 0.5
    if x <= _PG_T:
        return math.pi * np5 * (2.0 / (math.pi * x)) ** 1.5 * math.exp(-2.0 * np5 * np5 / x)
    return math.pi * np5 * math.exp(-np5 * np5 * math.pi * math.pi * x / 2.0)


def _std_normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _invgauss_cdf(x, z):
    """P(X <= x) for inverse-Gaussian with mean 1/z, shape 1 (z >= 0)."""
    sx = math.sqrt(x)
    term1 = _std_normal_cdf((x * z - 1.0) / sx)
    # exp(2z) * Phi(-(xz+1)/sqrt(x)) computed in log space to dodge overflow
    arg = -(x * z + 1.0) / sx
    log_phi = math.log(_std_normal_cdf(arg)) if arg > -37 else -math.inf
    term2 = math.exp(2.0 * z + log_phi) if log_phi > -math.inf else 0.0
    return term1 + term2


def _sample_trunc_invgauss(z, t, rng):
    """Inverse-Gaussian(mean 1/z, shape 1) restricted to (0, t]."""
    if z * t < 1.0:  # mean beyond the truncation point (covers z = 0)
        while True:
            while True:
                e1 = rng.exponential()
                e2 = rng.exponential()
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / (1.0 + t * e1) ** 2
            if z == 0.0 or math.log(rng.random()) <= -0.5 * z * z * x:
                return x
    mu = 1.0 / z
    while True:
        y = rng.standard_normal() ** 2
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) ** 2)
        if rng.random() > mu / (mu + x):
            x = mu * mu / x
        if x <= t:
            return x


def sample_polya_gamma_1(c, rng):
    """Exact draw from PG(1, c). E[PG(1,c)] = tanh(c/2)/(2c), = 1/4 at c = 0."""
    z = abs(c) / 2.0
    t = _PG_T
    K = math.pi * math.pi / 8.0 + z * z / 2.0
    log_p = math.log(math.pi / (2.0 * K)) - K * t
    log_q = math.log(2.0) - z + math.log(_invgauss_cdf(t, z))
    r_tail = 1.0 / (1.0 + math.exp(log_q - log_p))

    while True:
        if rng.random() < r_tail:
            x = t + rng.exponential() / K
        else:
            x = _sample_trunc_invgauss(z, t, rng)
        s = _pg_an(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_an(n, x)
                if y <= s:
                    return x / 4.0
            else:
                s += _pg_an(n, x)
                if y > s:
                    break


def polya_gamma_mean(c):
    if c == 0.0:
        return 0.25
    return math.tanh(c / 2.0) / (2.0 * c)


# ---------------------------------------------------------------------------
# Inverse Wishart (Bartlett construction)
# ---------------------------------------------------------------------------

def sample_invwishart(df, scale, rng):
    """IW(scale, df) draw with E[X] = scale / (df - D - 1); df > D - 1 required."""
    S = np.asarray(scale, dtype=float)
    D = S.shape[0]
    if df <= D - 1:
        raise ValueError(f"inverse-Wishart needs df > D - 1; got df={df}, D={D}")
    L = np.linalg.cholesky(S)
    T = np.zeros((D, D))
    for i in range(D):
        T[i, i] = math.sqrt(rng.chisquare(df - i))
        for j in range(i):
            T[i, j] = rng.standard_normal()
    # X = L (T T')^{-1} L' = V V' with V = L T^{-T}
    V, _ = _dtrtrs(T, L.T, lower=1, trans=0)
    V = V.T
    X = V @ V.T
    return 0.5 * (X + X.T)


def invwishart_logpdf(x, df, scale):
    """log IW(x; scale, df).

    For df <= D - 1 the prior is improper; the kernel is returned without the
    (undefined) normalizer, which suffices wherever only differences matter.
    """
    S = np.asarray(scale, dtype=float)
    D = S.shape[0]
    sign_s, logdet_s = np.linalg.slogdet(S)
    sign_x, logdet_x = np.linalg.slogdet(x)
    if sign_s <= 0 or sign_x <= 0:
        return -math.inf
    tr = np.trace(np.linalg.solve(x, S))
    out = -0.5 * (df + D + 1.0) * logdet_x - 0.5 * tr + 0.5 * df * logdet_s
    if df > D - 1:
        out += -0.5 * df * D * math.log(2.0) - multigammaln(0.5 * df, D)
    return out


# ---------------------------------------------------------------------------
# Dirichlet
# ---------------------------------------------------------------------------

def sample_dirichlet(conc, rng):
    conc = np.asarray(conc, dtype=float)
    if np.any(conc <= 0.0):
        raise ValueError("Dirichlet concentrations must be positive")
    return rng.dirichlet(conc)


def dirichlet_logpdf(x, conc):
    x = np.asarray(x, dtype=float)
    conc = np.asarray(conc, dtype=float)
    if np.any(x <= 0.0):
        return -math.inf
    return float(
        gammaln(conc.sum()) - gammaln(conc).sum() + ((conc - 1.0) * np.log(x)).sum()
    )
