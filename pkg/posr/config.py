import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel

from posr.models import RunConfig

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Raised for malformed run-config files (bad keys, unknown sections)."""
    pass


class Settings:
    # Logging
    LOG_LEVEL: str = os.getenv("POSR_LOG_LEVEL", "INFO").upper()

    # Default directory for epoch files, checkpoints and metrics
    OUT_DIR: str = os.getenv("POSR_OUT_DIR", "runs")

    @property
    def threads(self) -> int:
        """Parallel folds when neither --parallel nor loso.parallel is set"""
        try:
            return max(1, int(os.getenv("POSR_THREADS", "1")))
        except ValueError:
            logger.warning("Ignoring non-integer POSR_THREADS")
            return 1


settings = Settings()


def _unflatten(values: Mapping[str, Optional[str]]) -> Dict[str, Dict[str, Any]]:
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in values.items():
        section, dot, field = key.partition(".")
        if not dot or not section or not field or "." in field:
            raise ConfigError(f"Config key {key!r} must look like 'section.field'")
        nested.setdefault(section, {})[field] = None if value in (None, "") else value
    return nested


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Read a `section.field = value` config file into a validated RunConfig.

    Args:
        path: Config file; None gives the defaults
        overrides: Extra dotted keys applied on top of the file

    Raises:
        ConfigError: malformed keys or missing file
        pydantic.ValidationError: values out of range or unknown fields
    """
    raw: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        raw.update(dotenv_values(path, interpolate=False))
    nested = _unflatten(raw)
    for key, value in (overrides or {}).items():
        section, _, field = key.partition(".")
        nested.setdefault(section, {})[field] = value
    return RunConfig.model_validate(nested)


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def iter_config_items(config: RunConfig) -> Iterator[Tuple[str, str]]:
    for section_name in type(config).model_fields:
        section: BaseModel = getattr(config, section_name)
        for field_name in type(section).model_fields:
            yield f"{section_name}.{field_name}", _render(getattr(section, field_name))


def render_config(config: RunConfig) -> str:
    lines = ["# posr run config echo; re-running from this file reproduces the run"]
    current = None
    for key, value in iter_config_items(config):
        section = key.split(".", 1)[0]
        if section != current:
            lines.append("")
            lines.append(f"# {section}")
            current = section
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_config_echo(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_config(config), encoding="utf-8", newline="\n")
    return path
