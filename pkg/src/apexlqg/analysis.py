"""Statistics of run records: windowed PDFs, Welch PSDs, stabilization criteria and calibration fits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal
from scipy.ndimage import gaussian_filter1d

from .constants import K_B, TWO_PI
from .potential import PotentialParams, double_well_1d, find_apex


class FitError(RuntimeError):
    """A calibration fit could not be carried out; ``diagnostics`` holds details."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# PDFs


def count_modes(counts, smooth_bins: float = 2.0, prominence: float = 0.05) -> int:
    """Number of local maxima of the Gaussian-smoothed histogram above the prominence floor."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0 or counts.max() <= 0:
        return 0
    if counts.size == 1:
        return 1
    sm = gaussian_filter1d(counts, smooth_bins, mode="constant")
    # zero padding so maxima at the range edges are detected too
    padded = np.concatenate([[0.0], sm, [0.0]])
    peaks, _ = signal.find_peaks(padded, prominence=prominence * sm.max())
    return int(peaks.size)


@dataclass
class WindowHistogram:
    t_start: float
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    modes: int

    @property
    def unimodal(self) -> bool:
        return self.modes == 1


@dataclass
class PdfEvolution:
    t_avg: float
    windows: list = field(default_factory=list)

    @property
    def unimodal(self) -> np.ndarray:
        return np.array([w.unimodal for w in self.windows], dtype=bool)

    @property
    def means(self) -> np.ndarray:
        return np.array([w.mean for w in self.windows])

    @property
    def stds(self) -> np.ndarray:
        return np.array([w.std for w in self.windows])


def _window_slices(n: int, fs: float, t_avg: float):
    per = int(round(t_avg * fs))
    if per < 1 or n < per:
        raise ValueError(f"trace of {n} samples is shorter than one {t_avg * 1e3:g} ms window")
    return [slice(i * per, (i + 1) * per) for i in range(n // per)]


def histogram(values, bins: int = 64):
    """Histogram over the data range; a constant signal lands in a single bin."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.array([lo - 0.5, hi + 0.5]), np.array([values.size])
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return edges, counts


def windowed_pdf(series, fs: float, t_avg: float = 3e-3, bins: int = 64) -> PdfEvolution:
    """Histograms over consecutive non-overlapping windows of length ``t_avg``."""
    series = np.asarray(series, dtype=float)
    out = PdfEvolution(t_avg=t_avg)
    for sl in _window_slices(series.size, fs, t_avg):
        seg = series[sl]
        edges, counts = histogram(seg, bins)
        out.windows.append(
            WindowHistogram(sl.start / fs, edges, counts, float(seg.mean()), float(seg.std()), count_modes(counts))
        )
    return out


# ---------------------------------------------------------------------------
# PSDs


@dataclass
class Psd:
    f: np.ndarray
    S: np.ndarray
    fs: float
    nperseg: int
    noverlap: int
    window: str

    def band_power(self, lo: float, hi: float) -> float:
        m = (self.f >= lo) & (self.f <= hi)
        return float(np.trapezoid(self.S[m], self.f[m]))

    @property
    def variance(self) -> float:
        return float(np.sum(self.S) * (self.f[1] - self.f[0]))


def welch_psd(series, fs: float, segment_length: int | None = None, overlap: float = 0.5, window: str = "hann") -> Psd:
    """One-sided Welch estimate whose sum times the bin width equals the (mean-removed) variance."""
    x = np.asarray(series, dtype=float)
    n = segment_length or min(x.size, 4096)
    if n > x.size:
        raise ValueError("segment longer than the trace")
    nov = int(overlap * n)
    f, S = signal.welch(x, fs=fs, window=window, nperseg=n, noverlap=nov, detrend="constant", scaling="density")
    return Psd(f, S, fs, n, nov, window)


def well_peak_ratio(psd: Psd, f_well: float, band: float = 0.1) -> float:
    """Mean PSD within +-band of f_well over the median PSD of the two adjacent bands of equal width."""
    lo, hi = f_well * (1 - band), f_well * (1 + band)
    w = hi - lo
    inner = (psd.f >= lo) & (psd.f <= hi)
    flank = ((psd.f >= lo - w) & (psd.f < lo)) | ((psd.f > hi) & (psd.f <= hi + w))
    if not inner.any() or not flank.any():
        raise ValueError("PSD does not resolve the well band")
    return float(np.mean(psd.S[inner]) / np.median(psd.S[flank]))


# ---------------------------------------------------------------------------
# stabilization criteria


@dataclass
class CriteriaReport:
    t_start: np.ndarray
    unimodal: np.ndarray
    zero_mean_force: np.ndarray
    no_well_peak: np.ndarray
    u_mean: np.ndarray
    u_std: np.ndarray
    chi_std: np.ndarray
    peak_ratio: np.ndarray

    @property
    def stabilized(self) -> np.ndarray:
        return self.unimodal & self.zero_mean_force & self.no_well_peak

    def fractions(self) -> dict:
        n = max(len(self.t_start), 1)
        return {
            "unimodal": float(self.unimodal.sum() / n),
            "zero_mean_force": float(self.zero_mean_force.sum() / n),
            "no_well_peak": float(self.no_well_peak.sum() / n),
            "stabilized": float(self.stabilized.sum() / n),
        }

    def summary(self, label: str = "") -> str:
        fr = self.fractions()
        head = f"{label}: " if label else ""
        return (
            f"{head}windows={len(self.t_start)} stabilized={fr['stabilized']:.2f} "
            f"unimodal={fr['unimodal']:.2f} zero_mean_force={fr['zero_mean_force']:.2f} "
            f"no_well_peak={fr['no_well_peak']:.2f} mean_window_std_chi_x={np.mean(self.chi_std) * 1e3:.1f} mV"
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t_start_s", "unimodal", "zero_mean_force", "no_well_peak", "stabilized",
                         "u_mean_V", "u_std_V", "chi_x_std_V", "well_peak_ratio"])
            for i in range(len(self.t_start)):
                wr.writerow([f"{self.t_start[i]:.6g}", int(self.unimodal[i]), int(self.zero_mean_force[i]),
                             int(self.no_well_peak[i]), int(self.stabilized[i]), repr(float(self.u_mean[i])),
                             repr(float(self.u_std[i])), repr(float(self.chi_std[i])), repr(float(self.peak_ratio[i]))])


@dataclass(frozen=True)
class CriteriaConfig:
    t_avg: float = 3e-3
    bins: int = 64
    f_well: float = 65e3
    band: float = 0.1
    peak_factor: float = 3.0
    segment_s: float = 1e-3


def evaluate_criteria(record, cfg: CriteriaConfig = CriteriaConfig()) -> CriteriaReport:
    """Per-window stabilization criteria on the chi_x and u traces of ``record``."""
    fs = record.sample_rate
    chi = record["chi_x"]
    u = record["u"]
    slices = _window_slices(len(chi), fs, cfg.t_avg)
    nseg = max(8, int(round(cfg.segment_s * fs)))
    rows = []
    for sl in slices:
        c, uu = chi[sl], u[sl]
        _, counts = histogram(c, cfg.bins)
        uni = count_modes(counts) == 1
        zm = abs(uu.mean()) <= uu.std()
        ratio = well_peak_ratio(welch_psd(c, fs, min(nseg, c.size)), cfg.f_well, cfg.band)
        rows.append((sl.start / fs, uni, zm, ratio <= cfg.peak_factor, uu.mean(), uu.std(), c.std(), ratio))
    if not rows:
        empty = np.zeros(0)
        return CriteriaReport(empty, empty.astype(bool), empty.astype(bool), empty.astype(bool), empty, empty, empty, empty)
    cols = list(zip(*rows))
    return CriteriaReport(
        np.array(cols[0]), np.array(cols[1], dtype=bool), np.array(cols[2], dtype=bool), np.array(cols[3], dtype=bool),
        np.array(cols[4]), np.array(cols[5]), np.array(cols[6]), np.array(cols[7]),
    )


# ---------------------------------------------------------------------------
# calibration fits


def harmonic_psd(f, Gamma: float, Omega: float, gain: float, T0: float, m: float, floor: float = 0.0):
    """One-sided PSD (V^2/Hz) of a thermally driven damped oscillator seen with sensitivity ``gain``."""
    w = TWO_PI * np.asarray(f, dtype=float)
    return gain**2 * 4.0 * Gamma * K_B * T0 / (m * ((Omega**2 - w**2) ** 2 + (Gamma * w) ** 2)) + floor


@dataclass
class HarmonicFit:
    Gamma: float
    Omega: float
    gain: float
    floor: float
    cost: float

    def __iter__(self):
        return iter((self.Gamma, self.Omega, self.gain))


def fit_harmonic_psd(psd: Psd, T0: float, m: float, band: tuple | None = None, fit_floor: bool = True) -> HarmonicFit:
    """Least-squares fit (in log PSD) of the damped-oscillator spectrum over ``band`` (Hz)."""
    f, S = psd.f, psd.S
    sel = (f > 0) if band is None else (f >= band[0]) & (f <= band[1])
    f, S = f[sel], S[sel]
    if f.size < 5 or np.any(S <= 0):
        raise FitError("not enough positive PSD bins in the fit band", {"bins": int(f.size)})
    ipk = int(np.argmax(S))
    W0 = TWO_PI * f[ipk]
    half = S >= 0.5 * S[ipk]
    fwhm = max(f[half].max() - f[half].min(), f[1] - f[0]) if half.sum() > 1 else (f[1] - f[0])
    G0 = TWO_PI * fwhm
    # area under the peak gives the gain through equipartition
    var = float(np.trapezoid(S, f))
    g0 = np.sqrt(max(var, 1e-300) * m * W0**2 / (K_B * T0))
    fl0 = float(np.min(S)) * 0.5 if fit_floor else 0.0
    scale = np.median(S)

    def model(p):
        G, W, g = np.exp(p[:3])
        fl = p[3] * scale if fit_floor else 0.0
        return harmonic_psd(f, G, W, g, T0, m, fl)

    def resid(p):
        return np.log(model(p)) - np.log(S)

    p0 = [np.log(G0), np.log(W0), np.log(g0)] + ([fl0 / scale] if fit_floor else [])
    lo = [-np.inf] * 3 + ([0.0] if fit_floor else [])
    hi = [np.inf] * 3 + ([np.inf] if fit_floor else [])
    res = optimize.least_squares(resid, p0, bounds=(lo, hi), x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                                 max_nfev=2000)
    if not res.success:
        raise FitError("harmonic PSD fit did not converge", {"status": res.status, "message": res.message})
    G, W, g = np.exp(res.x[:3])
    return HarmonicFit(float(G), float(W), float(g), float(res.x[3] * scale) if fit_floor else 0.0, float(res.cost))


def _boltzmann_bin_probs(edges, template: PotentialParams, alpha, beta, offset, T0, sub: int = 16):
    e = np.asarray(edges, dtype=float)
    # midpoint rule on ``sub`` points per bin
    frac = (np.arange(sub) + 0.5) / sub
    xs = e[:-1, None] + (e[1:] - e[:-1])[:, None] * frac[None, :]
    p = replace(template, alpha_scale=alpha, beta_scale=beta,
                delta0=template.delta0 + offset, delta1=template.delta1 + offset)
    U = double_well_1d(xs.ravel(), p).reshape(xs.shape)
    logw = -U / (K_B * T0)
    logw -= logw.max()
    w = np.exp(logw).mean(axis=1) * (e[1:] - e[:-1])
    return w / w.sum(), p


@dataclass
class DoubleWellFit:
    k_apex: float
    alpha: float
    beta: float
    offset: float
    params: PotentialParams


def fit_double_well_pdf(edges, counts, T0: float, template: PotentialParams) -> DoubleWellFit:
    """Maximum-likelihood Boltzmann fit of a free-evolution position histogram.

    ``template`` supplies the beam geometry; depths and a common offset are
    fitted, and the apex curvature of the fitted potential is returned.
    """
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if count_modes(counts) < 2:
        raise FitError("non-ergodic sample: the histogram does not populate both wells")
    centers = 0.5 * (edges[1:] + edges[:-1])
    kT = K_B * T0

    def nll(p):
        a, b = -np.exp(p[0]) * kT, -np.exp(p[1]) * kT
        probs, _ = _boltzmann_bin_probs(edges, template, a, b, p[2] * 1e-9, T0)
        return -np.sum(counts * np.log(np.maximum(probs, 1e-300)))

    a0 = max(abs(template.alpha_scale), kT)
    b0 = max(abs(template.beta_scale), kT)
    off0 = float(np.sum(counts * centers) / counts.sum()) * 1e9
    res = optimize.minimize(nll, [np.log(a0 / kT), np.log(b0 / kT), off0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000})
    a, b = -np.exp(res.x[0]) * kT, -np.exp(res.x[1]) * kT
    _, p = _boltzmann_bin_probs(edges, template, a, b, res.x[2] * 1e-9, T0)
    apex = find_apex(p)
    if not apex.valid:
        raise FitError("fitted potential has no apex", {"alpha": a, "beta": b})
    return DoubleWellFit(apex.k_apex, a, b, res.x[2] * 1e-9, p)


def _lockin(sig, t, f):
    """Complex amplitude of the tone exp(i 2 pi f t) in ``sig``."""
    ph = np.exp(-1j * TWO_PI * f * t)
    return 2.0 * np.mean(sig * ph)


def force_calibration(record, tones, m: float, Gamma: float, omega: tuple, c: np.ndarray, snr_min: float = 5.0):
    """Force per volt (c_fx, c_fz) from sine-drive responses in chi_x and chi_z.

    ``tones`` is a sequence of (amplitude_V, frequency_hz); ``omega`` the
    (x, z) angular resonance frequencies of the harmonic trap; ``c`` the 2x3
    detection matrix.  The drive phasor is taken from the recorded ``u`` trace
    so no timing convention is assumed.  Each tone gives two complex equations
    linear in the two force coefficients, solved jointly by least squares.
    """
    t = record["t"]
    u = record["u"] - record["u"].mean()
    chi = np.vstack([record["chi_x"] - record["chi_x"].mean(), record["chi_z"] - record["chi_z"].mean()])
    T = t[-1] - t[0]
    rows, rhs = [], []
    for amp, f in tones:
        drive = _lockin(u, t, f)
        if amp == 0 or abs(drive) < 0.5 * abs(amp):
            raise FitError("tone not found", {"frequency_hz": f, "drive_amplitude_V": abs(drive)})
        a = np.array([_lockin(chi[i], t, f) for i in range(2)])
        # noise level from nearby off-tone frequencies
        probes = f + np.arange(3, 13) / T
        noise = np.array([[abs(_lockin(chi[i], t, fp)) for fp in probes] for i in range(2)])
        level = np.sqrt(np.mean(noise**2, axis=1))
        if np.all(np.abs(a) < snr_min * level):
            raise FitError("tone not found", {"frequency_hz": f, "response": np.abs(a).tolist(), "noise": level.tolist()})
        w = TWO_PI * f
        Hx = 1.0 / (m * (omega[0] ** 2 - w**2 + 1j * Gamma * w))
        Hz = 1.0 / (m * (omega[1] ** 2 - w**2 + 1j * Gamma * w))
        rows.append([c[0, 0] * Hx * drive, c[0, 2] * Hz * drive])
        rows.append([c[1, 0] * Hx * drive, c[1, 2] * Hz * drive])
        rhs.extend(a)
    M = np.array(rows)
    y = np.array(rhs)
    A = np.vstack([M.real, M.imag])
    b = np.concatenate([y.real, y.imag])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(sol[0]), float(sol[1])


# ---------------------------------------------------------------------------
# exports


def psd_to_csv(path, psds: dict) -> None:
    """Write PSDs sharing one frequency grid; ``psds`` maps column label to Psd."""
    labels = list(psds)
    f = psds[labels[0]].f
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["f_Hz"] + [f"{lab}_V2_per_Hz" for lab in labels])
        for i in range(f.size):
            wr.writerow([repr(float(f[i]))] + [repr(float(psds[lab].S[i])) for lab in labels])


def pdf_to_csv(path, pdf: PdfEvolution, unit: str = "V") -> None:
    """Long-format table: one row per (window, bin)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_start_s", f"bin_lo_{unit}", f"bin_hi_{unit}", "count", f"window_mean_{unit}",
                     f"window_std_{unit}", "modes"])
        for w in pdf.windows:
            for j in range(w.counts.size):
                wr.writerow([f"{w.t_start:.6g}", repr(float(w.edges[j])), repr(float(w.edges[j + 1])),
                             int(w.counts[j]), repr(w.mean), repr(w.std), w.modes])
