"""Architecture configuration: variant presets, validation, file I/O.

Config files are flat ``key = value`` text.  Lists are comma separated, the
permutation is a string over {L, G}, and an optional ``preset`` key names a
built-in variant whose fields serve as the base; every other key overrides
that base field-by-field.  ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

from .exceptions import GeometryError, ContractError

LOCAL = "L"
GLOBAL = "G"


@dataclass(frozen=True)
class SvtrConfig:
    """Full description of one backbone variant."""

    embed_dims: tuple[int, int, int] = (64, 128, 256)
    depths: tuple[int, int, int] = (3, 6, 3)
    heads: tuple[int, int, int] = (2, 4, 8)
    combined_dim: int = 192
    permutation: tuple[str, ...] = tuple("L" * 6 + "G" * 6)
    window: tuple[int, int] = (7, 11)
    mlp_ratio: float = 4.0
    charset_size: int = 37
    input_h: int = 32
    input_w: int = 128
    max_label_len: int = 25
    dropout_rate: float = 0.1
    attn_dropout_rate: float = 0.1

    def __post_init__(self):
        if len(self.permutation) != sum(self.depths):
            raise ContractError(
                f"permutation length {len(self.permutation)} != total depth {sum(self.depths)}")
        if any(k not in (LOCAL, GLOBAL) for k in self.permutation):
            raise ContractError(f"permutation entries must be L or G: {self.permutation}")
        for d, h in zip(self.embed_dims, self.heads):
            if d % h != 0:
                raise ContractError(f"embed dim {d} not divisible by head count {h}")
        if self.embed_dims[0] % 2 != 0:
            raise ContractError(f"first embed dim {self.embed_dims[0]} must be even")
        if self.input_h % 16 != 0 or self.input_w % 4 != 0:
            raise GeometryError(
                f"input {self.input_h}x{self.input_w} must have height divisible by 16 "
                "and width divisible by 4")
        if self.input_w // 4 < self.max_label_len:
            raise ContractError(
                f"input width {self.input_w} yields {self.input_w // 4} output positions, "
                f"fewer than max label length {self.max_label_len}")
        if self.charset_size < 2:
            raise ContractError(f"charset size {self.charset_size} < 2")
        wh, ww = self.window
        if wh % 2 == 0 or ww % 2 == 0 or wh < 1 or ww < 1:
            raise ContractError(f"window {wh}x{ww} must be odd and positive")
        if self.mlp_ratio <= 0:
            raise ContractError(f"mlp_ratio must be positive, got {self.mlp_ratio}")

    # -- derived geometry ---------------------------------------------------

    def stage_geometry(self, input_h: int | None = None, input_w: int | None = None):
        """Per-stage (height, width, channels) token grids."""
        h = (input_h or self.input_h) // 4
        w = (input_w or self.input_w) // 4
        geo = []
        for dim in self.embed_dims:
            geo.append((h, w, dim))
            h = (h + 1) // 2
        return geo

    def stage_permutation(self, stage: int) -> tuple[str, ...]:
        """Block kinds for one stage (0-based), sliced from the global list."""
        start = sum(self.depths[:stage])
        return self.permutation[start:start + self.depths[stage]]

    @property
    def seq_len(self) -> int:
        """Number of output positions (W/4)."""
        return self.input_w // 4

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["permutation"] = "".join(self.permutation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SvtrConfig":
        kw = dict(d)
        kw["embed_dims"] = tuple(kw["embed_dims"])
        kw["depths"] = tuple(kw["depths"])
        kw["heads"] = tuple(kw["heads"])
        kw["window"] = tuple(kw["window"])
        kw["permutation"] = tuple(kw["permutation"])
        return cls(**kw)


def _preset(**kw) -> SvtrConfig:
    return SvtrConfig(**kw)


PRESETS: dict[str, SvtrConfig] = {
    "svtr-t": _preset(),
    "svtr-s": _preset(embed_dims=(96, 192, 256), depths=(3, 6, 6), heads=(3, 6, 8),
                      combined_dim=192, permutation=tuple("L" * 8 + "G" * 7)),
    "svtr-b": _preset(embed_dims=(128, 256, 384), depths=(3, 6, 9), heads=(4, 8, 12),
                      combined_dim=256, permutation=tuple("L" * 8 + "G" * 10)),
    "svtr-l": _preset(embed_dims=(192, 256, 512), depths=(3, 9, 9), heads=(6, 8, 16),
                      combined_dim=384, permutation=tuple("L" * 10 + "G" * 11)),
    # Desk-scale config for tests and the overfit run; dropout off for determinism
    # headroom, width 64 so that 5-character labels stay CTC-feasible (2L+1 <= 16).
    "svtr-micro": _preset(embed_dims=(8, 16, 24), depths=(1, 1, 1), heads=(1, 2, 2),
                          combined_dim=16, permutation=tuple("LGL"),
                          input_h=16, input_w=64, max_label_len=5,
                          dropout_rate=0.0, attn_dropout_rate=0.0),
}

_INT_KEYS = {"combined_dim", "charset_size", "input_h", "input_w", "max_label_len"}
_FLOAT_KEYS = {"mlp_ratio", "dropout_rate", "attn_dropout_rate"}
_INT_LIST_KEYS = {"embed_dims", "depths", "heads", "window"}


def parse_config_text(text: str, source: str = "<config>") -> SvtrConfig:
    """Parse the flat key-value schema, starting from an optional preset base."""
    fields: dict = {}
    base = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                raise ContractError(f"{source}:{lineno}: unknown preset {value!r}")
            base = PRESETS[value]
        elif key in _INT_KEYS:
            fields[key] = int(value)
        elif key in _FLOAT_KEYS:
            fields[key] = float(value)
        elif key in _INT_LIST_KEYS:
            fields[key] = tuple(int(v) for v in value.split(","))
        elif key == "permutation":
            fields[key] = tuple(value.replace(",", "").upper())
        else:
            raise ContractError(f"{source}:{lineno}: unknown config key {key!r}")
    if base is None:
        base = SvtrConfig()
    return replace(base, **fields)


def format_config(config: SvtrConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(spec: str) -> SvtrConfig:
    """Resolve a preset name or a config file path."""
    if spec in PRESETS:
        return PRESETS[spec]
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ContractError(f"unknown preset and unreadable config file: {spec} ({exc})") from exc
    return parse_config_text(text, source=spec)
