import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import ValidationError

from ..errors import ConfigError
from .types import ExperimentSpec, Profile


logger = logging.getLogger(__name__)


def read_yaml(file_path: Path) -> Dict[str, Any]:
    try:
        with open(file_path, "r") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {file_path}: {e}", path=str(file_path))
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {file_path.name}: {e}", path=str(file_path))
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path.name} must contain a mapping", path=str(file_path))
    return data


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ProfileLoader:
    """Loads named scenario profiles from a directory of YAML files."""

    def __init__(self, profile_dir: Union[str, Path]):
        self.profile_dir = Path(profile_dir)
        self.profiles: Dict[str, Profile] = {}
        self.load_profiles()

    def load_profiles(self):
        profile_files: List[Path] = []
        profile_files.extend(self.profile_dir.glob("*.yaml"))
        profile_files.extend(self.profile_dir.glob("*.yml"))

        if not profile_files:
            logger.warning(f"No profile files found in {self.profile_dir}")
            return

        loaded = {}
        for file_path in sorted(profile_files):
            try:
                profile = self._load_profile_file(file_path)
            except ConfigError as e:
                logger.error(f"Failed to load {file_path.name}: {e.reason}")
                continue
            loaded[profile.name] = profile
            logger.info(
                f"Loaded profile: {profile.name} (v{profile.version}, "
                f"M={profile.system.num_aps}, N={profile.system.num_ues}, G={profile.system.num_clusters})"
            )
        self.profiles = loaded

    def _load_profile_file(self, file_path: Path) -> Profile:
        data = read_yaml(file_path)
        data.setdefault("name", file_path.stem)
        return build_profile(data, source=file_path.name)

    def get(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> Profile:
        if name not in self.profiles:
            raise ConfigError(f"unknown profile: {name}", available=sorted(self.profiles))
        profile = self.profiles[name]
        if not overrides:
            return profile
        return build_profile(_merge(profile.model_dump(), overrides), source=f"{name} (with overrides)")

    def load_experiment(self, path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
        """Reads an experiment file; its `profile` key names the base scenario,
        `system`/`solver`/... keys override that profile section by section."""
        file_path = Path(path)
        data = read_yaml(file_path)
        if overrides:
            data = _merge(data, overrides)

        profile_name = data.pop("profile", None)
        if profile_name is None:
            raise ConfigError(f"{file_path.name}: missing 'profile'", path=str(file_path))
        sections = {k: data.pop(k) for k in list(data) if k in Profile.model_fields and k != "name"}
        data["base"] = self.get(profile_name, sections)
        data.setdefault("scenario", file_path.stem)

        try:
            spec = ExperimentSpec(**data)
        except ValidationError as e:
            raise ConfigError(f"invalid experiment {file_path.name}: {e}", path=str(file_path))
        logger.info(
            f"Loaded experiment: {spec.scenario} (sweep {spec.sweep_var} over {len(spec.sweep_values)} values, "
            f"{len(spec.seeds)} seeds, algorithms={spec.algorithms})"
        )
        return spec


def build_profile(data: Dict[str, Any], source: str = "<dict>") -> Profile:
    try:
        profile = Profile(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid profile {source}: {e}", source=source)
    error = profile.validate_profile()
    if error:
        raise ConfigError(f"Validation failed for {source}: {error}", source=source)
    return profile
