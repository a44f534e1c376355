"""Parametric multipath OFDM channels for Alice, her collaborator Jack, and spoofers.

All randomness comes from explicit :class:`numpy.random.Generator` handles.
Dataset generation derives one generator per (seed, stream, slot) so any slot
can be regenerated on its own, e.g. at a different SNR with the same paths.
"""
from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# SeedSequence stream tags; never renumber, datasets depend on them
STREAM_ALICE_BASE = 1
STREAM_ALICE_SLOT = 2
STREAM_COLLAB = 3
STREAM_EVE_BASE = 4
STREAM_EVE_SLOT = 5
STREAM_NOISE = 6
STREAM_ATTACK = 7


@dataclass(frozen=True)
class ArrayConfig:
    tx_antennas: int = 8
    rx_antennas: int = 8
    subcarriers: int = 32
    carrier_freq: float = 28e9
    bandwidth: float = 50e6
    antenna_spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if self.tx_antennas < 1 or self.rx_antennas < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.subcarriers < 2:
            raise ValueError("at least two subcarriers are required")
        if not (self.carrier_freq > 0 and self.bandwidth > 0):
            raise ValueError("carrier_freq and bandwidth must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.tx_antennas, self.subcarriers)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq


@dataclass
class PathSet:
    """``L`` propagation paths: gain, delay (in sample intervals), phase, departure angle."""

    gains: np.ndarray
    delays: np.ndarray
    phases: np.ndarray
    angles: np.ndarray = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float).reshape(-1)
        self.delays = np.asarray(self.delays, dtype=float).reshape(-1)
        self.phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if self.angles is None:
            self.angles = np.zeros_like(self.gains)
        self.angles = np.asarray(self.angles, dtype=float).reshape(-1)
        n = len(self.gains)
        if n < 1:
            raise ValueError("a path set needs at least one path")
        if not (len(self.delays) == len(self.phases) == len(self.angles) == n):
            raise ValueError("path parameter arrays differ in length")
        for name in ("gains", "delays", "phases", "angles"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite path {name}")
        if np.any(self.gains <= 0):
            raise ValueError("path gains must be positive")
        if np.any(self.delays < 0):
            raise ValueError("path delays must be non-negative")

    def __len__(self):
        return len(self.gains)

    def __eq__(self, other):
        if not isinstance(other, PathSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("gains", "delays", "phases", "angles")
        )

    def copy(self) -> "PathSet":
        return PathSet(self.gains.copy(), self.delays.copy(), self.phases.copy(), self.angles.copy())

    def steering_slopes(self, cfg: ArrayConfig) -> np.ndarray:
        """Per-path phase increment between adjacent ULA elements."""
        return 2 * np.pi * cfg.antenna_spacing * np.sin(self.angles)


@dataclass(frozen=True)
class Scenario:
    """Node geometry and attack configuration.

    Default positions place Alice and Bob as in the O1 layout; Jack sits
    ``alice_jack_distance`` metres from Alice along ``jack_direction``.
    """

    alice_pos: tuple[float, float, float] = (23.5, 266.93, 0.0)
    bob_pos: tuple[float, float, float] = (0.0, 0.0, 4.0)
    alice_jack_distance: float = 0.2
    jack_direction: tuple[float, float, float] = (0.0, -1.0, 0.0)
    eve_radius: float = 10.0
    num_eves: int = 5
    attack_ratio: float = 0.5
    velocity: tuple[float, float, float] = (0.5, 0.0, 0.0)
    slot_duration: float = 1e-2
    num_paths: int = 5
    eve_shares_scatterers: bool = False
    noise_shared: bool = True
    # Jack's per-path offsets per wavelength of displacement
    offset_delay_scale: float = 0.005
    offset_phase_scale: float = 0.03
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("alice_pos", "bob_pos", "jack_direction", "velocity"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)
        if self.alice_jack_distance < 0:
            raise ValueError("alice_jack_distance must be >= 0")
        if not self.alice_jack_distance < self.alice_bob_distance / 10:
            raise ValueError("Alice-Jack distance must be much smaller (< D/10) than the Alice-Bob distance")
        if not 0.0 <= self.attack_ratio <= 1.0:
            raise ValueError("attack_ratio k must lie in [0, 1]")
        if self.num_eves < 1:
            raise ValueError("num_eves must be >= 1")
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if np.linalg.norm(self.jack_direction) == 0:
            raise ValueError("jack_direction must be non-zero")

    @property
    def alice_bob_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.alice_pos, self.bob_pos)))

    @property
    def jack_pos(self) -> tuple[float, float, float]:
        u = np.asarray(self.jack_direction) / np.linalg.norm(self.jack_direction)
        return tuple(np.asarray(self.alice_pos) + self.alice_jack_distance * u)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names})


@dataclass
class ChannelSample:
    """One time slot: LS estimates for Alice, Jack and every candidate Eve.

    ``label`` says who actually transmitted on the authentication stream in this
    slot; for an attack slot ``attacker`` indexes ``eve_ests``.
    """

    time_slot: int
    alice_est: np.ndarray
    jack_est: np.ndarray
    eve_ests: list
    snr_db: float
    true_alice: np.ndarray | None = None
    label: str = "alice"
    attacker: int = -1

    @property
    def received(self) -> np.ndarray:
        return self.alice_est if self.label == "alice" else self.eve_ests[self.attacker]


def synthesize_channel(paths: PathSet, cfg: ArrayConfig, antenna_phase_slopes=None) -> np.ndarray:
    """Frequency response ``H[m, n]`` of a multipath channel.

    ``H[m, n] = sum_l a_l exp(j(phi_l + m s_l)) exp(-j 2 pi tau_l n / K)``, with
    the carrier term ``exp(-j 2 pi f tau_l)`` already folded into ``phi_l``
    and ``s_l`` the ULA steering slope of path ``l``.
    """
    slopes = paths.steering_slopes(cfg) if antenna_phase_slopes is None else np.asarray(antenna_phase_slopes, float)
    slopes = np.broadcast_to(slopes, paths.gains.shape) if slopes.ndim == 0 else slopes.reshape(-1)
    if slopes.shape != paths.gains.shape:
        raise ValueError(f"{slopes.shape[0]} steering slopes given for {len(paths)} paths")
    if not np.all(np.isfinite(slopes)):
        raise ValueError("non-finite steering slopes")
    m = np.arange(cfg.tx_antennas)[:, None, None]
    n = np.arange(cfg.subcarriers)[None, :, None]
    phase = paths.phases + m * slopes - 2 * np.pi * paths.delays * n / cfg.subcarriers
    return np.sum(paths.gains * np.exp(1j * phase), axis=-1)


def draw_paths(rng: np.random.Generator, num_paths: int, cfg: ArrayConfig) -> PathSet:
    """Random path set with an exponential power-delay profile, unit total power."""
    k = cfg.subcarriers
    delays = np.sort(rng.uniform(0.0, k / 4, num_paths))
    power = np.exp(-delays / (k / 8)) * rng.exponential(1.0, num_paths)
    gains = np.sqrt(power / power.sum())
    gains = np.maximum(gains, 1e-6)
    phases = rng.uniform(0.0, 2 * np.pi, num_paths)
    angles = rng.uniform(-np.pi / 2, np.pi / 2, num_paths)
    return PathSet(gains, delays, phases, angles)


def make_collaborator_paths(alice_paths: PathSet, scenario: Scenario, rng: np.random.Generator,
                            cfg: ArrayConfig | None = None, distance: float | None = None) -> PathSet:
    """Jack's paths: Alice's scatterers with displacement-proportional delay/phase offsets.

    Offsets are Gaussian with standard deviation ``scale * d / lambda``;
    ``distance`` overrides ``scenario.alice_jack_distance``.
    """
    d = scenario.alice_jack_distance if distance is None else float(distance)
    if d < 0:
        raise ValueError("displacement must be non-negative")
    if d == 0:
        return alice_paths.copy()
    cfg = cfg or ArrayConfig()
    n_lambda = d / cfg.wavelength
    L = len(alice_paths)
    d_tau = scenario.offset_delay_scale * n_lambda * rng.standard_normal(L)
    d_phi = scenario.offset_phase_scale * n_lambda * rng.standard_normal(L)
    delays = np.abs(alice_paths.delays + d_tau)
    phases = np.mod(alice_paths.phases + d_phi, 2 * np.pi)
    return PathSet(alice_paths.gains.copy(), delays, phases, alice_paths.angles.copy())


def eve_positions(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """``num_eves`` points uniform in the horizontal disk of radius ``r`` around Alice."""
    if scenario.eve_radius <= 0:
        raise ValueError("eve_radius must be positive")
    rad = scenario.eve_radius * np.sqrt(rng.uniform(0.0, 1.0, scenario.num_eves))
    ang = rng.uniform(0.0, 2 * np.pi, scenario.num_eves)
    pos = np.tile(np.asarray(scenario.alice_pos, float), (scenario.num_eves, 1))
    pos[:, 0] += rad * np.cos(ang)
    pos[:, 1] += rad * np.sin(ang)
    return pos


def make_eve_paths(scenario: Scenario, rng: np.random.Generator, cfg: ArrayConfig | None = None,
                   alice_paths: PathSet | None = None) -> list[PathSet]:
    """Independent path sets for each candidate Eve.

    Eve gains carry the large-scale loss of her distance to Bob relative to
    Alice's. With ``scenario.eve_shares_scatterers`` (and ``alice_paths``
    given) Eves instead perturb Alice's scatterers like a distant collaborator.
    """
    cfg = cfg or ArrayConfig()
    pos = eve_positions(scenario, rng)
    bob = np.asarray(scenario.bob_pos, float)
    D = scenario.alice_bob_distance
    out = []
    for p in pos:
        scale = D / max(np.linalg.norm(p - bob), 1e-9)
        if scenario.eve_shares_scatterers and alice_paths is not None:
            dist = float(np.linalg.norm(p - np.asarray(scenario.alice_pos)))
            paths = make_collaborator_paths(alice_paths, scenario, rng, cfg, distance=dist)
        else:
            paths = draw_paths(rng, scenario.num_paths, cfg)
        paths.gains = paths.gains * scale
        out.append(paths)
    return out


def noise_variance(true_channel: np.ndarray, snr_db: float) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    power = float(np.mean(np.abs(true_channel) ** 2))
    return power * 10.0 ** (-snr_db / 10.0)


def complex_noise(shape, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian draw with per-entry variance ``sigma2``."""
    if sigma2 == 0:
        return np.zeros(shape, dtype=complex)
    s = math.sqrt(sigma2 / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def ls_estimate(y: np.ndarray, pilot: complex = 1.0) -> np.ndarray:
    """Least-squares estimate ``(x^H x)^{-1} x^H y`` for a scalar pilot."""
    x = complex(pilot)
    return (x.conjugate() * y) / (x.conjugate() * x)


def transmit_and_estimate(true_channel: np.ndarray, snr_db: float, rng: np.random.Generator | None = None,
                          pilot: complex = 1.0, noise: np.ndarray | None = None) -> np.ndarray:
    """Send ``pilot`` through ``true_channel``, add noise at ``snr_db``, return the LS estimate.

    ``snr_db=inf`` disables noise. A precomputed ``noise`` array overrides the
    draw, which is how Alice and Jack share one realization per slot.
    """
    if not (np.isfinite(snr_db) or snr_db == np.inf):
        raise ValueError("snr_db must be finite or +inf")
    h = np.asarray(true_channel)
    if noise is None:
        sigma2 = noise_variance(h, snr_db)
        noise = complex_noise(h.shape, sigma2, rng) if sigma2 > 0 else np.zeros(h.shape, complex)
    y = h * pilot + noise
    return ls_estimate(y, pilot)


def _slot_rng(seed: int, stream: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream, *index]))


@dataclass
class _Trajectory:
    """Smooth per-path motion around a base path set; evaluated per slot in closed form."""

    base: PathSet
    doppler: np.ndarray
    delay_amp: np.ndarray
    delay_period: np.ndarray
    delay_phase: np.ndarray
    angle_amp: np.ndarray
    gain_amp: np.ndarray

    @classmethod
    def draw(cls, rng, base: PathSet, max_doppler: float):
        L = len(base)
        return cls(
            base=base,
            doppler=max_doppler * np.cos(rng.uniform(0, 2 * np.pi, L)),
            delay_amp=rng.uniform(0.5, 1.5, L),
            delay_period=rng.uniform(400, 2000, L),
            delay_phase=rng.uniform(0, 2 * np.pi, L),
            angle_amp=rng.uniform(0.05, 0.2, L),
            gain_amp=rng.uniform(0.05, 0.2, L),
        )

    def at(self, t: int, rng: np.random.Generator) -> PathSet:
        b = self.base
        L = len(b)
        cyc = 2 * np.pi * t / self.delay_period + self.delay_phase
        delays = np.abs(b.delays + self.delay_amp * np.sin(cyc) + 0.02 * rng.standard_normal(L))
        phases = np.mod(b.phases + self.doppler * t + 0.05 * rng.standard_normal(L), 2 * np.pi)
        angles = b.angles + self.angle_amp * np.sin(cyc + 1.0)
        gains = b.gains * np.exp(self.gain_amp * np.cos(cyc) + 0.02 * rng.standard_normal(L))
        return PathSet(gains, delays, phases, angles)


def attack_labels(num_samples: int, k: float, rng: np.random.Generator, window: int | None = None):
    """Per-slot ``(is_alice, attacker)`` with exactly ``round(k*s)`` Alice slots per window."""
    window = num_samples if window is None else int(window)
    if window < 1:
        raise ValueError("window must be >= 1")
    is_alice = np.zeros(num_samples, dtype=bool)
    for start in range(0, num_samples, window):
        s = min(window, num_samples - start)
        n_alice = int(round(k * s))
        idx = rng.permutation(s)[:n_alice]
        is_alice[start + idx] = True
    return is_alice


def _snr_key(snr_db: float) -> tuple[int, int]:
    # the float64 bit pattern as two u32 words: distinct, non-negative, valid for +-inf
    bits = int(np.float64(snr_db).view(np.uint64))
    return bits >> 32, bits & 0xFFFFFFFF


def generate_dataset(scenario: Scenario, cfg: ArrayConfig, num_samples: int, snr_db: float,
                     window: int | None = None, start_slot: int = 0) -> list[ChannelSample]:
    """Simulate ``num_samples`` consecutive slots of the Alice/Jack/Eve system.

    Alice and Jack move as a rigid pair at ``scenario.velocity``; their shared
    scatterers drift smoothly. Each slot is labelled Alice or Eve so that every
    ``window`` consecutive slots hold exactly ``round(k * window)`` Alice slots.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    seed = scenario.rng_seed
    speed = float(np.linalg.norm(scenario.velocity))
    max_doppler = 2 * np.pi * speed * scenario.slot_duration / cfg.wavelength

    alice_base = draw_paths(_slot_rng(seed, STREAM_ALICE_BASE), scenario.num_paths, cfg)
    alice_traj = _Trajectory.draw(_slot_rng(seed, STREAM_ALICE_BASE, 1), alice_base, max_doppler)
    eve_bases = make_eve_paths(scenario, _slot_rng(seed, STREAM_EVE_BASE), cfg, alice_base)
    eve_trajs = [_Trajectory.draw(_slot_rng(seed, STREAM_EVE_BASE, 1 + i), b, max_doppler)
                 for i, b in enumerate(eve_bases)]

    is_alice = attack_labels(num_samples, scenario.attack_ratio, _slot_rng(seed, STREAM_ATTACK, start_slot), window)
    attackers = _slot_rng(seed, STREAM_ATTACK, start_slot, 1).integers(0, scenario.num_eves, num_samples)

    bob = np.asarray(scenario.bob_pos)
    pos0 = np.asarray(scenario.alice_pos, float)
    vel = np.asarray(scenario.velocity, float)
    D0 = scenario.alice_bob_distance

    samples = []
    for i in range(num_samples):
        t = start_slot + i
        pos = pos0 + vel * scenario.slot_duration * t
        pathloss = D0 / max(np.linalg.norm(pos - bob), 1e-9)

        a_paths = alice_traj.at(t, _slot_rng(seed, STREAM_ALICE_SLOT, t))
        a_paths.gains = a_paths.gains * pathloss
        j_paths = make_collaborator_paths(a_paths, scenario, _slot_rng(seed, STREAM_COLLAB), cfg)
        h_a = synthesize_channel(a_paths, cfg)
        h_j = synthesize_channel(j_paths, cfg)

        nrng = _slot_rng(seed, STREAM_NOISE, t, *_snr_key(snr_db))
        sigma2 = noise_variance(h_a, snr_db)
        n_a = complex_noise(h_a.shape, sigma2, nrng)
        n_j = n_a if scenario.noise_shared else complex_noise(h_j.shape, noise_variance(h_j, snr_db), nrng)
        eve_ests = []
        for e, traj in enumerate(eve_trajs):
            h_e = synthesize_channel(traj.at(t, _slot_rng(seed, STREAM_EVE_SLOT, t, e)), cfg)
            n_e = complex_noise(h_e.shape, noise_variance(h_e, snr_db), nrng)
            eve_ests.append(transmit_and_estimate(h_e, snr_db, noise=n_e).astype(np.complex64))

        samples.append(ChannelSample(
            time_slot=t,
            alice_est=transmit_and_estimate(h_a, snr_db, noise=n_a).astype(np.complex64),
            jack_est=transmit_and_estimate(h_j, snr_db, noise=n_j).astype(np.complex64),
            eve_ests=eve_ests,
            snr_db=float(np.float32(snr_db)),
            true_alice=h_a.astype(np.complex64),
            label="alice" if is_alice[i] else "eve",
            attacker=-1 if is_alice[i] else int(attackers[i]),
        ))
    return samples


def split_samples(samples: list, train_fraction: float = 0.9, shuffle: bool = False,
                  rng: np.random.Generator | None = None):
    """Time-ordered train/test split (``shuffle=True`` for a random split)."""
    n = len(samples)
    n_train = int(round(train_fraction * n))
    order = np.arange(n)
    if shuffle:
        order = (rng or np.random.default_rng()).permutation(n)
    train = [samples[i] for i in sorted(order[:n_train])]
    test = [samples[i] for i in sorted(order[n_train:])]
    return train, test


# --- dataset container ------------------------------------------------------

DATASET_MAGIC = b"APEGCSI1"
DATASET_VERSION = 1
_FLAG_TRUE_ALICE = 1
_FLAG_NOISE_SHARED = 2


class DatasetError(ValueError):
    """Base class for unreadable dataset containers."""


class DatasetFormatError(DatasetError):
    """Not a dataset container (bad magic)."""


class DatasetVersionError(DatasetError):
    """Container written by an unsupported format version."""


class DatasetTruncatedError(DatasetError):
    """Payload shorter than the header promises."""


class DatasetDimensionError(DatasetError):
    """Header dimensions invalid or different from what the caller expects."""


def sidecar_path(path) -> "Path":
    from pathlib import Path
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _pack_matrix(h: np.ndarray) -> bytes:
    h = np.asarray(h)
    out = np.empty(h.shape + (2,), dtype="<f4")
    out[..., 0] = h.real
    out[..., 1] = h.imag
    return out.tobytes()


def save_dataset(path, samples: list, scenario: Scenario | None = None, cfg: ArrayConfig | None = None,
                 extra_meta: dict | None = None):
    """Write ``samples`` as an APEGCSI1 container plus a ``<name>.meta.json`` sidecar."""
    import json
    from pathlib import Path

    if not samples:
        raise ValueError("cannot write an empty dataset")
    m, k = samples[0].alice_est.shape
    has_true = all(s.true_alice is not None for s in samples)
    flags = (_FLAG_TRUE_ALICE if has_true else 0)
    if scenario is None or scenario.noise_shared:
        flags |= _FLAG_NOISE_SHARED
    buf = bytearray(DATASET_MAGIC)
    buf += struct.pack("<IIIIB", DATASET_VERSION, m, k, len(samples), flags)
    for s in samples:
        mats = [s.alice_est, s.jack_est] + ([s.true_alice] if has_true else []) + list(s.eve_ests)
        for h in mats:
            if np.shape(h) != (m, k):
                raise DatasetDimensionError(f"slot {s.time_slot}: matrix shape {np.shape(h)} != {(m, k)}")
        buf += struct.pack("<IfI", s.time_slot, s.snr_db, len(s.eve_ests))
        for h in mats:
            buf += _pack_matrix(h)
    path = Path(path)
    path.write_bytes(bytes(buf))
    meta = {
        "scenario": scenario.to_dict() if scenario is not None else None,
        "rng_seed": scenario.rng_seed if scenario is not None else None,
        "array": dataclasses.asdict(cfg) if cfg is not None else None,
        "labels": [s.label for s in samples],
        "attackers": [s.attacker for s in samples],
    }
    meta.update(extra_meta or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def load_external_dataset(path, expect_shape: tuple[int, int] | None = None) -> list[ChannelSample]:
    """Read an APEGCSI1 container; labels come from the sidecar when present."""
    import json

    data = open(path, "rb").read()
    if data[:8] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic, not an APEGCSI1 container")
    head = struct.calcsize("<IIIIB")
    if len(data) < 8 + head:
        raise DatasetTruncatedError(f"{path}: header truncated")
    version, m, k, n, flags = struct.unpack_from("<IIIIB", data, 8)
    if version != DATASET_VERSION:
        raise DatasetVersionError(f"{path}: version {version}, expected {DATASET_VERSION}")
    if m < 1 or k < 2:
        raise DatasetDimensionError(f"{path}: invalid dimensions M={m}, K={k}")
    if expect_shape is not None and (m, k) != tuple(expect_shape):
        raise DatasetDimensionError(f"{path}: dimensions {(m, k)} != expected {tuple(expect_shape)}")
    has_true = bool(flags & _FLAG_TRUE_ALICE)

    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    labels = meta.get("labels") or ["alice"] * n
    attackers = meta.get("attackers") or [-1] * n
    if len(labels) != n or len(attackers) != n:
        raise DatasetDimensionError(f"{side}: label count does not match {n} samples")

    mat_bytes = m * k * 8
    pos = 8 + head
    samples = []
    for i in range(n):
        if pos + 12 > len(data):
            raise DatasetTruncatedError(f"{path}: sample {i} header truncated")
        slot, snr, n_eves = struct.unpack_from("<IfI", data, pos)
        pos += 12
        count = 2 + int(has_true) + n_eves
        if pos + count * mat_bytes > len(data):
            raise DatasetTruncatedError(f"{path}: sample {i} payload truncated")
        raw = np.frombuffer(data, "<f4", count * m * k * 2, pos).reshape(count, m, k, 2)
        pos += count * mat_bytes
        mats = (raw[..., 0] + 1j * raw[..., 1]).astype(np.complex64)
        samples.append(ChannelSample(
            time_slot=slot, alice_est=mats[0], jack_est=mats[1],
            eve_ests=list(mats[2 + int(has_true):]), snr_db=float(snr),
            true_alice=mats[2] if has_true else None,
            label=labels[i], attacker=int(attackers[i]),
        ))
    if pos != len(data):
        raise DatasetDimensionError(f"{path}: {len(data) - pos} trailing bytes after {n} samples")
    return samples
