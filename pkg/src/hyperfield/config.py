"""Flat key=value config files with [encoder] [hd] [inr] [diffusion] [train] sections.

Unknown keys are rejected; missing keys take the documented defaults below.
Parsing preserves section and key order so that serialize(parse(text))
differs from the input by whitespace only.
"""

from dataclasses import dataclass

from .diffusion import DenoiserConfig
from .errors import ConfigError
from .hyperdecoder import HDConfig
from .inr import INRConfig
from .ivae import EncoderConfig

# value kinds: int, float, size (HxW), ints (comma list), str
SCHEMA = {
    "encoder": {
        "resolution": ("size", "16x16"),
        "in_channels": ("int", "1"),
        "latent_channels": ("int", "4"),
        "base_channels": ("int", "32"),
        "ch_mult": ("ints", "1,2,2"),
        "num_blocks": ("int", "2"),
    },
    "hd": {
        "latent_size": ("size", "4x4"),
        "patch_size": ("int", "1"),
        "token_dim": ("int", "64"),
        "encoder_layers": ("int", "2"),
        "decoder_layers": ("int", "2"),
        "heads": ("int", "4"),
        "head_dim": ("int", "16"),
        "feedforward_dim": ("int", "128"),
        "groups": ("int", "2"),
        "recon_mode": ("str", "scale"),
    },
    "inr": {
        "type": ("str", "siren"),
        "layers": ("int", "3"),
        "hidden_dim": ("int", "32"),
        "omega": ("float", "30.0"),
        "point_enc_dim": ("int", "0"),
        "fourier_scale": ("float", "10.0"),
        "sigma": ("float", "1.0"),
    },
    "diffusion": {
        "diffusion_steps": ("int", "1000"),
        "noise_schedule": ("str", "linear"),
        "beta_start": ("float", "1e-4"),
        "beta_end": ("float", "2e-2"),
        "base_channels": ("int", "32"),
        "ch_mult": ("ints", "1,2"),
        "num_blocks": ("int", "2"),
    },
    "train": {
        "batch_size": ("int", "16"),
        "iterations": ("int", "2000"),
        "lr": ("float", "1e-3"),
        "kl_weight": ("float", "1e-4"),
    },
}

_INR_TYPES = {"siren": "sine", "sine": "sine", "mlp": "relu", "relu": "relu"}


@dataclass
class TrainConfig:
    batch_size: int
    iterations: int
    lr: float
    kl_weight: float


@dataclass
class FullConfig:
    raw: dict  # section -> {key: value string}, insertion-ordered

    def value(self, section: str, key: str) -> str:
        kind, default = SCHEMA[section][key]
        text = self.raw.get(section, {}).get(key, default)
        return _parse_value(section, key, kind, text)

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            resolution=self.value("encoder", "resolution"),
            in_channels=self.value("encoder", "in_channels"),
            latent_channels=self.value("encoder", "latent_channels"),
            base_channels=self.value("encoder", "base_channels"),
            ch_mult=self.value("encoder", "ch_mult"),
            num_blocks=self.value("encoder", "num_blocks"),
        )

    def hd(self) -> HDConfig:
        return HDConfig(
            latent_size=self.value("hd", "latent_size"),
            latent_channels=self.value("encoder", "latent_channels"),
            patch_size=self.value("hd", "patch_size"),
            token_dim=self.value("hd", "token_dim"),
            encoder_layers=self.value("hd", "encoder_layers"),
            decoder_layers=self.value("hd", "decoder_layers"),
            heads=self.value("hd", "heads"),
            head_dim=self.value("hd", "head_dim"),
            feedforward_dim=self.value("hd", "feedforward_dim"),
            groups=self.value("hd", "groups"),
            recon_mode=self.value("hd", "recon_mode"),
        )

    def inr(self) -> INRConfig:
        kind = self.value("inr", "type").lower()
        if kind not in _INR_TYPES:
            raise ConfigError("config-invalid", f"inr type must be siren or mlp, got {kind!r}")
        layers = self.value("inr", "layers")  # total weight matrices
        if layers < 2:
            raise ConfigError("config-invalid", "inr layers must be >= 2")
        return INRConfig(
            in_dim=2,
            out_dim=self.value("encoder", "in_channels"),
            hidden_dim=self.value("inr", "hidden_dim"),
            hidden_layers=layers - 1,
            activation=_INR_TYPES[kind],
            omega=self.value("inr", "omega"),
            enc_dim=self.value("inr", "point_enc_dim"),
            fourier_scale=self.value("inr", "fourier_scale"),
            sigma=self.value("inr", "sigma"),
        )

    def denoiser(self) -> DenoiserConfig:
        return DenoiserConfig(
            channels=self.value("encoder", "latent_channels"),
            base_channels=self.value("diffusion", "base_channels"),
            ch_mult=self.value("diffusion", "ch_mult"),
            num_blocks=self.value("diffusion", "num_blocks"),
        )

    def train(self) -> TrainConfig:
        tc = TrainConfig(
            batch_size=self.value("train", "batch_size"),
            iterations=self.value("train", "iterations"),
            lr=self.value("train", "lr"),
            kl_weight=self.value("train", "kl_weight"),
        )
        if tc.kl_weight < 0:
            raise ConfigError("config-invalid", "kl_weight must be >= 0")
        if tc.batch_size < 1 or tc.iterations < 1:
            raise ConfigError("config-invalid", "batch_size and iterations must be >= 1")
        if tc.lr < 0:
            raise ConfigError("config-invalid", "lr must be >= 0")
        return tc

    def diffusion_steps(self) -> int:
        return self.value("diffusion", "diffusion_steps")

    def schedule_args(self) -> dict:
        return {
            "T": self.value("diffusion", "diffusion_steps"),
            "kind": self.value("diffusion", "noise_schedule"),
            "beta_start": self.value("diffusion", "beta_start"),
            "beta_end": self.value("diffusion", "beta_end"),
        }

    def validate(self) -> "FullConfig":
        """Cross-section consistency: shapes must agree between components."""
        enc = self.encoder()
        hd = self.hd()
        if enc.latent_size != tuple(hd.latent_size):
            raise ConfigError(
                "config-invalid",
                f"encoder latent size {enc.latent_size} != hd latent_size {tuple(hd.latent_size)}",
            )
        self.inr()
        self.denoiser()
        self.train()
        return self


def _parse_value(section, key, kind, text):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "size":
            h, w = text.lower().split("x")
            return (int(h), int(w))
        if kind == "ints":
            return tuple(int(v) for v in text.split(","))
        return text
    except (ValueError, AttributeError) as exc:
        raise ConfigError("config-invalid", f"bad value for [{section}] {key}: {text!r}") from exc


def parse_config(text: str) -> FullConfig:
    raw: dict[str, dict[str, str]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError("config-invalid", f"unknown section [{section}] (line {lineno})")
            raw.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError("config-invalid", f"expected key=value on line {lineno}: {stripped!r}")
        if section is None:
            raise ConfigError("config-invalid", f"key outside any section on line {lineno}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError("config-invalid", f"unknown key {key!r} in [{section}] (line {lineno})")
        if key in raw[section]:
            raise ConfigError("config-invalid", f"duplicate key {key!r} in [{section}]")
        raw[section][key] = value
    cfg = FullConfig(raw=raw)
    # force-parse everything present so bad values fail at load time
    for sec, entries in raw.items():
        for key in entries:
            cfg.value(sec, key)
    return cfg


def serialize_config(cfg: FullConfig) -> str:
    lines = []
    for section, entries in cfg.raw.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


def complete_config(cfg: FullConfig) -> FullConfig:
    """Fill every schema key with its effective value (for checkpoint embedding)."""
    raw = {}
    for section, keys in SCHEMA.items():
        raw[section] = {
            key: cfg.raw.get(section, {}).get(key, default) for key, (_, default) in keys.items()
        }
    return FullConfig(raw=raw)
