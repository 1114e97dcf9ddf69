"""Loading of built-in and user-supplied YAML preset files.

Built-in presets live under perfcast/configs. Directories listed in the
PERFCAST_PRESET_PATH environment variable (colon separated) are searched
first, so a user file named like a built-in one shadows it.
"""

from __future__ import annotations

import os
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import yaml

from .arch import ClusterSpec, DeviceSpec, MemoryLevel, NetworkLink, resolve_device

__all__ = [
    "load_yaml",
    "find_config",
    "list_devices",
    "list_clusters",
    "list_models",
    "get_device_record",
    "get_device",
    "get_cluster",
    "get_model_record",
    "dram_presets",
    "network_presets",
    "apply_dram_preset",
    "apply_network_preset",
]

_BUILTIN_DIR = Path(__file__).parent / "configs"
_ENV_VAR = "PERFCAST_PRESET_PATH"


def _search_dirs() -> list:
    dirs = []
    env = os.environ.get(_ENV_VAR, "")
    for entry in env.split(os.pathsep):
        if entry:
            dirs.append(Path(entry))
    dirs.append(_BUILTIN_DIR)
    return dirs


def find_config(relative: str) -> Path:
    """Locate a config file by its path relative to a preset directory."""
    for base in _search_dirs():
        candidate = base / relative
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no preset file {relative!r} in {_ENV_VAR} or built-ins")


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return data or {}


@lru_cache(maxsize=None)
def _load_named(relative: str) -> dict:
    return load_yaml(find_config(relative))


def list_devices() -> list:
    return sorted(_load_named("devices.yaml"))


def list_clusters() -> list:
    return sorted(_load_named("clusters.yaml"))


def list_models() -> list:
    return sorted(_load_named("models.yaml"))


def get_device_record(name: str) -> dict:
    table = _load_named("devices.yaml")
    if name not in table:
        raise KeyError(f"unknown device {name!r}; available: {', '.join(sorted(table))}")
    return table[name]


def get_device(name: str) -> DeviceSpec:
    return resolve_device(get_device_record(name))


def _resolve_link(record: dict) -> NetworkLink:
    link = NetworkLink(
        name=record["name"],
        bandwidth_bytes_per_s=float(record["bandwidth_bytes_per_s"]),
        latency_s=float(record.get("latency_s", 0.0)),
        topology=record.get("topology", "ring"),
    )
    link.validate()
    return link


def get_cluster(name: str, total_devices=None) -> ClusterSpec:
    """Build a cluster preset, optionally resized to total_devices."""
    table = _load_named("clusters.yaml")
    if name not in table:
        raise KeyError(f"unknown cluster {name!r}; available: {', '.join(sorted(table))}")
    record = table[name]
    cluster = ClusterSpec(
        name=record["name"],
        device=get_device(record["device"]),
        total_devices=int(total_devices if total_devices is not None else record["total_devices"]),
        devices_per_node=int(record["devices_per_node"]),
        intra_node=_resolve_link(record["intra_node"]),
        inter_node=_resolve_link(record["inter_node"]),
    )
    cluster.validate()
    return cluster


def get_model_record(name: str) -> dict:
    table = _load_named("models.yaml")
    if name not in table:
        raise KeyError(f"unknown model {name!r}; available: {', '.join(sorted(table))}")
    return dict(table[name])


def dram_presets() -> dict:
    return dict(_load_named("tech.yaml")["dram"])


def network_presets() -> dict:
    return dict(_load_named("tech.yaml")["network"])


def apply_dram_preset(device: DeviceSpec, preset: str) -> DeviceSpec:
    """Swap the device's off-chip level for a named DRAM technology."""
    table = dram_presets()
    if preset not in table:
        raise KeyError(f"unknown DRAM preset {preset!r}; available: {', '.join(sorted(table))}")
    record = table[preset]
    dram = MemoryLevel(
        name=preset,
        capacity_bytes=float(record["capacity_bytes"]),
        bandwidth_bytes_per_s=float(record["bandwidth_bytes_per_s"]),
        is_offchip=True,
    )
    return device.with_dram(dram)


def apply_network_preset(cluster: ClusterSpec, preset: str) -> ClusterSpec:
    """Swap the cluster's inter-node link for a named network technology."""
    table = network_presets()
    if preset not in table:
        raise KeyError(f"unknown network preset {preset!r}; available: {', '.join(sorted(table))}")
    record = table[preset]
    link = NetworkLink(
        name=preset,
        bandwidth_bytes_per_s=float(record["bandwidth_bytes_per_s"]),
        latency_s=float(record.get("latency_s", cluster.inter_node.latency_s)),
        topology=cluster.inter_node.topology,
    )
    link.validate()
    return replace(cluster, inter_node=link)
