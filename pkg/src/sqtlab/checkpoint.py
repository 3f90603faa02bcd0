"""Agent checkpoints.

File layout (all text is UTF-8)::

    SQTLAB-CHECKPOINT 1\\n
    <header: one line of JSON, keys sorted>\\n
    <array bytes: float64 little-endian, C order, concatenated>

The header holds ``variant``, ``seed``, ``state_dim``, ``action_dim``,
``action_low``, ``action_high``, the full ``config``, the counters
``env_steps`` / ``update_count``, the Adam step counts, the agent RNG
state and ``arrays``: an ordered list of ``{"name", "shape"}`` describing
the payload. Array names are ``critic``, ``critic_target``,
``critic_adam_m``, ``critic_adam_v``, ``actor``, ``actor_target``,
``actor_adam_m`` and ``actor_adam_v``; critic arrays have shape
``(n_networks, n_params)`` in the flat layout of :mod:`sqtlab.numerics`.
The replay buffer is not stored.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .agent import Agent, TrainingConfig
from .errors import FormatError
from .numerics import AdamState

MAGIC = b"SQTLAB-CHECKPOINT 1\n"


def _arrays(agent: Agent) -> list[tuple[str, np.ndarray]]:
    c, a = agent.critic, agent.actor
    return [
        ("critic", c.params.flat), ("critic_target", c.target.flat),
        ("critic_adam_m", c.opt.first_moment), ("critic_adam_v", c.opt.second_moment),
        ("actor", a.params.flat), ("actor_target", a.target.flat),
        ("actor_adam_m", a.opt.first_moment), ("actor_adam_v", a.opt.second_moment),
    ]


def dumps(agent: Agent) -> bytes:
    arrays = _arrays(agent)
    config = dataclasses.asdict(agent.config)
    config["hidden_sizes"] = list(config["hidden_sizes"])
    header = {
        "variant": agent.variant,
        "seed": agent.seed,
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "action_low": agent.actor.action_low.tolist(),
        "action_high": agent.actor.action_high.tolist(),
        "config": config,
        "env_steps": agent.env_steps,
        "update_count": agent.update_count,
        "critic_adam_steps": agent.critic.opt.step_count,
        "actor_adam_steps": agent.actor.opt.step_count,
        "rng_state": agent.rng.bit_generator.state,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload


def loads(data: bytes) -> Agent:
    if not data.startswith(MAGIC):
        raise FormatError("not an sqtlab checkpoint")
    try:
        line_end = data.index(b"\n", len(MAGIC))
        header = json.loads(data[len(MAGIC):line_end])
        cfg = header["config"]
        cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
        agent = Agent(
            header["variant"], header["state_dim"], header["action_dim"],
            header["action_low"], header["action_high"], TrainingConfig(**cfg), header["seed"],
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    payload = data[line_end + 1:]
    loaded = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) * 8
        if offset + n > len(payload):
            raise FormatError("truncated checkpoint payload")
        loaded[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(payload):
        raise FormatError("trailing bytes in checkpoint payload")
    for name, arr in _arrays(agent):
        if name not in loaded or loaded[name].shape != arr.shape:
            raise FormatError(f"array {name!r} missing or mis-shaped")
    c, a = agent.critic, agent.actor
    c.params = c.params.with_flat(loaded["critic"])
    c.target = c.target.with_flat(loaded["critic_target"])
    c.opt = AdamState(loaded["critic_adam_m"], loaded["critic_adam_v"], header["critic_adam_steps"])
    a.params = a.params.with_flat(loaded["actor"])
    a.target = a.target.with_flat(loaded["actor_target"])
    a.opt = AdamState(loaded["actor_adam_m"], loaded["actor_adam_v"], header["actor_adam_steps"])
    agent.env_steps = header["env_steps"]
    agent.update_count = header["update_count"]
    agent.rng.bit_generator.state = header["rng_state"]
    return agent


def save_checkpoint(agent: Agent, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(agent))


def load_checkpoint(path) -> Agent:
    with open(path, "rb") as fh:
        return loads(fh.read())
