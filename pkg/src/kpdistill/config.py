"""Pipeline configuration: one TOML file, flag overrides, stable hash."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .client import EndpointConfig, SamplingParams
from .errors import ConfigError
from .inference import StudentEndpoint
from .prompts import RolePrompts
from .sandbox import ExecLimits


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the CLI stages need, validated on load."""

    teacher: EndpointConfig
    students: tuple[StudentEndpoint, ...]
    sampling: SamplingParams
    exec_limits: ExecLimits
    prompts: RolePrompts
    tolerance: Decimal
    seed: int
    work_dir: Path
    backend: str = "replay"
    replay_store: Optional[Path] = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def config_hash(self) -> str:
        payload = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _section(data: Mapping[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return dict(value)


def default_config_dict() -> dict[str, Any]:
    return {
        "seed": 0,
        "tolerance": "1e-4",
        "paths": 4,
        "backend": "replay",
        "work_dir": "out",
        "teacher": {"base_url": "http://localhost:8000/v1", "model_name": "teacher"},
    }


def load_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Load TOML config; flag overrides win over file values."""
    data = default_config_dict()
    if path is not None:
        try:
            with Path(path).open("rb") as fh:
                file_data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        data.update(file_data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    try:
        teacher_data = _section(data, "teacher")
        teacher = EndpointConfig(
            base_url=str(teacher_data.get("base_url", "http://localhost:8000/v1")),
            model_name=str(teacher_data.get("model_name", "teacher")),
            api_key_env_var=teacher_data.get("api_key_env_var"),
            request_timeout=float(teacher_data.get("request_timeout", 60.0)),
            max_retries=int(teacher_data.get("max_retries", 3)),
            backoff_schedule=tuple(teacher_data.get("backoff_schedule", (0.5, 1.0, 2.0))),
            max_in_flight=int(teacher_data.get("max_in_flight", 4)),
        )
        students = tuple(
            StudentEndpoint(
                base_url=str(s["base_url"]),
                model_name=str(s.get("model_name", "student")),
                temperature=float(s.get("temperature", 0.0)),
                top_p=float(s.get("top_p", 1.0)),
                max_tokens=int(s.get("max_tokens", 512)),
                timeout=float(s.get("timeout", 60.0)),
                api_key_env_var=s.get("api_key_env_var"),
            )
            for s in data.get("students", [])
        )
        sampling_data = _section(data, "sampling")
        sampling = SamplingParams(
            temperature=float(sampling_data.get("temperature", 0.7)),
            top_p=float(sampling_data.get("top_p", 1.0)),
            max_tokens=int(sampling_data.get("max_tokens", 1024)),
            n_paths=int(data.get("paths", 4)),
            seed=data.get("seed", 0),
        )
        exec_limits = ExecLimits.from_dict(_section(data, "exec_limits"))
        prompts_data = _section(data, "prompts")
        prompts = RolePrompts(**prompts_data) if prompts_data else RolePrompts()
        tolerance = Decimal(str(data.get("tolerance", "1e-4")))
        backend = str(data.get("backend", "replay"))
        if backend not in ("live", "replay", "record"):
            raise ConfigError(f"backend must be live|replay|record, got {backend!r}")
        store = data.get("replay_store")
        config = PipelineConfig(
            teacher=teacher,
            students=students,
            sampling=sampling,
            exec_limits=exec_limits,
            prompts=prompts,
            tolerance=tolerance,
            seed=int(data.get("seed", 0)),
            work_dir=Path(str(data.get("work_dir", "out"))),
            backend=backend,
            replay_store=Path(str(store)) if store else None,
            raw=data,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, InvalidOperation) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return config
