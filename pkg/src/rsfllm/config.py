"""Scenario configuration: defaults, validation, unit conversion, file parsing.

Config files are human-facing and use dBm for powers, dB for path loss and
degrees for angles.  Internally everything is linear watts and radians.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields


def dbm_to_watts(dbm: float) -> float:
    """Convert a dBm value to linear watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        return float("-inf")
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        return float("-inf")
    return 10.0 * math.log10(x)


def deg_to_rad(deg: float) -> float:
    return deg * math.pi / 180.0


class ConfigError(ValueError):
    """Raised for unknown keys or invariant violations in a scenario config."""


@dataclass(frozen=True)
class ScenarioConfig:
    """All wireless and training parameters of a scenario, plus the seed.

    Powers are linear watts, angles radians.  ``B_q`` defaults to
    ``floor(N*K / Q)`` when left unset.
    """

    Q: int = 3                     # legitimate users
    N_T: int = 8                   # transmit antennas per user
    N_R: int = 16                  # receive antennas
    N_J: int = 64                  # jammer antennas
    P_q: float = dbm_to_watts(5.0)     # per-user power budget [W]
    P_J: float = dbm_to_watts(30.0)    # jammer power budget [W]
    sigma2: float = dbm_to_watts(-3.0)  # background noise power [W]
    N: int = 64                    # subcarriers
    K: int = 14                    # OFDM symbols per slot
    B_q: int | None = None         # max resource blocks per user
    eta: float = 10.0              # surrogate-covariance scale
    theta_Hq: float = 0.0          # central user DoA [rad]
    theta_J: float = deg_to_rad(20.0)  # central jammer DoA [rad]
    spread_H: float = deg_to_rad(10.0)  # user angle-spread half-width [rad]
    spread_G: float = deg_to_rad(5.0)   # jammer angle-spread half-width [rad]
    L_H: int = 128                 # resolvable user paths
    L_G: int = 128                 # resolvable jammer paths
    path_loss_db: float = 10.0
    f_c: float = 2.4e9             # carrier frequency [Hz]
    delta_f: float = 15e3          # subcarrier spacing [Hz]
    T_s: float | None = None       # symbol period [s]; defaults to 1/delta_f
    doppler_hz: float = 0.0        # max path Doppler; 0 keeps channels static in k
    seed: int = 0
    n_rounds: int = 10
    n_epochs: int = 10
    # toy split-training task
    vocab_size: int = 64
    embed_dim: int = 16
    n_classes: int = 3
    hidden_dim: int = 32
    batch_size: int = 8
    samples_per_client: int = 96
    learning_rate: float = 0.1
    clip_tau: float = 1.0
    noise_multiplier: float = 1.0

    def __post_init__(self):
        if self.B_q is None:
            object.__setattr__(self, "B_q", (self.N * self.K) // self.Q)
        if self.T_s is None:
            object.__setattr__(self, "T_s", 1.0 / self.delta_f)
        self._validate()

    def _validate(self):
        def check(cond, msg):
            if not cond:
                raise ConfigError(f"config invariant violated: {msg}")

        check(self.Q >= 1, "Q >= 1")
        check(self.N >= 1 and self.K >= 1, "N >= 1 and K >= 1")
        check(1 <= self.B_q <= self.N * self.K, "1 <= B_q <= N*K")
        check(self.N_T >= 1 and self.N_R >= 1 and self.N_J >= 1,
              "antenna counts >= 1")
        check(self.P_q > 0, "P_q > 0")
        check(self.P_J >= 0, "P_J >= 0")
        check(self.sigma2 > 0, "sigma2 > 0")
        check(self.eta >= 0, "eta >= 0")
        half_pi = math.pi / 2
        check(-half_pi < self.theta_Hq < half_pi, "theta_Hq in (-pi/2, pi/2)")
        check(-half_pi < self.theta_J < half_pi, "theta_J in (-pi/2, pi/2)")
        check(self.spread_H >= 0 and self.spread_G >= 0, "spreads >= 0")
        check(self.L_H >= 1 and self.L_G >= 1, "path counts >= 1")
        check(self.delta_f > 0 and self.T_s > 0, "delta_f > 0 and T_s > 0")
        check(self.n_rounds >= 1 and self.n_epochs >= 1,
              "n_rounds >= 1 and n_epochs >= 1")
        check(self.embed_dim % 2 == 0, "embed_dim even (complex symbol packing)")
        check(self.n_classes >= 2, "n_classes >= 2")
        check(self.vocab_size >= self.n_classes, "vocab_size >= n_classes")


# config-file key -> (dataclass field, converter).  Keys are the file-facing
# spelling; powers are dBm, angles degrees, path loss dB.
_WIRELESS_KEYS = {
    "q": ("Q", int),
    "n_t": ("N_T", int),
    "n_r": ("N_R", int),
    "n_j": ("N_J", int),
    "p_q": ("P_q", dbm_to_watts),
    "p_j": ("P_J", dbm_to_watts),
    "sigma2": ("sigma2", dbm_to_watts),
    "n": ("N", int),
    "k": ("K", int),
    "b_q": ("B_q", int),
    "eta": ("eta", float),
    "theta_h": ("theta_Hq", deg_to_rad),
    "theta_j": ("theta_J", deg_to_rad),
    "spread_h": ("spread_H", deg_to_rad),
    "spread_g": ("spread_G", deg_to_rad),
    "l_h": ("L_H", int),
    "l_g": ("L_G", int),
    "path_loss": ("path_loss_db", float),
    "f_c": ("f_c", float),
    "delta_f": ("delta_f", float),
    "t_s": ("T_s", float),
    "doppler": ("doppler_hz", float),
}

_TRAINING_KEYS = {
    "n_rounds": ("n_rounds", int),
    "n_epochs": ("n_epochs", int),
    "vocab_size": ("vocab_size", int),
    "embed_dim": ("embed_dim", int),
    "n_classes": ("n_classes", int),
    "hidden_dim": ("hidden_dim", int),
    "batch_size": ("batch_size", int),
    "samples_per_client": ("samples_per_client", int),
    "learning_rate": ("learning_rate", float),
    "clip_tau": ("clip_tau", float),
    "noise_multiplier": ("noise_multiplier", float),
}

_SCENARIO_KEYS = {
    "seed": ("seed", int),
}

_SECTIONS = {
    "wireless": _WIRELESS_KEYS,
    "training": _TRAINING_KEYS,
    "scenario": _SCENARIO_KEYS,
}

_UNIT_SUFFIXES = ("dbm", "ghz", "mhz", "khz", "deg", "db", "hz")
_UNIT_SCALE = {"ghz": 1e9, "mhz": 1e6, "khz": 1e3}


def _strip_units(raw: str) -> tuple[str, float]:
    """Split a value like ``"30 dBm"`` into its number and a unit scale."""
    text = raw.strip().lower()
    for suffix in _UNIT_SUFFIXES:
        if text.endswith(suffix):
            return text[: -len(suffix)].strip(), _UNIT_SCALE.get(suffix, 1.0)
    return text, 1.0


def parse_config(path) -> ScenarioConfig:
    """Parse a flat key-value scenario file, applying defaults for absent keys.

    Unknown keys are a hard error naming the key; invariant violations raise
    :class:`ConfigError` citing the invariant.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)

    overrides = {}
    valid_fields = {f.name for f in fields(ScenarioConfig)}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section: {section!r}")
        keymap = _SECTIONS[section]
        for key, raw in parser[section].items():
            if key not in keymap:
                raise ConfigError(f"unknown config key: [{section}] {key!r}")
            field_name, conv = keymap[key]
            assert field_name in valid_fields
            text, scale = _strip_units(raw)
            try:
                if conv is int:
                    value = int(float(text) * scale)
                else:
                    value = conv(float(text) * scale)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
            overrides[field_name] = value

    return ScenarioConfig(**overrides)
