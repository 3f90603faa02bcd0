"""Small builders shared by the agent, harness and acceptance tests."""

import numpy as np

from sqtlab.agent import Agent, TrainingConfig, variant_config
from sqtlab.numerics import MlpParams, make_rng, n_params
from sqtlab.replay import Batch


def small_config(variant="sqt", **overrides):
    base = TrainingConfig(
        hidden_sizes=(16, 16), batch_size=8, warmup_steps=50, target_interval=10,
        actor_lr=1e-3, critic_lr=1e-3, buffer_capacity=10_000,
    )
    return variant_config(variant, base, **overrides)


def small_agent(variant="sqt", state_dim=4, action_dim=2, seed=0, low=-1.0, high=1.0, **overrides):
    cfg = small_config(variant, **overrides)
    return Agent(variant, state_dim, action_dim, [low] * action_dim, [high] * action_dim, cfg, seed)


def random_batch(rng, size, state_dim=4, action_dim=2, done_rate=0.2):
    return Batch(
        rng.normal(size=(size, state_dim)),
        rng.uniform(-1, 1, size=(size, action_dim)),
        rng.normal(size=size),
        rng.normal(size=(size, state_dim)),
        (rng.random(size) < done_rate).astype(float),
    )


def constant_ensemble(layer_sizes, constants):
    """Ensemble whose member i outputs ``constants[i]`` for every input."""
    flat = np.zeros((len(constants), n_params(layer_sizes)))
    params = MlpParams(tuple(layer_sizes), flat)
    params.biases[-1][:, 0] = constants
    return params


def set_critics(agent, params):
    """Install ``params`` as both live and target critics."""
    agent.critic.params = params
    agent.critic.target = params.copy()


def flat_state(agent):
    """Every trainable array of an agent, for bit-level comparisons."""
    c, a = agent.critic, agent.actor
    return [c.params.flat, c.target.flat, a.params.flat, a.target.flat,
            c.opt.first_moment, c.opt.second_moment, a.opt.first_moment, a.opt.second_moment]


def fill_buffer(agent, rng, n):
    from sqtlab.replay import Transition

    for _ in range(n):
        agent.buffer.push(Transition(
            rng.normal(size=agent.state_dim), rng.uniform(-1, 1, size=agent.action_dim),
            float(rng.normal()), rng.normal(size=agent.state_dim), bool(rng.random() < 0.1),
        ))


__all__ = [
    "small_config", "small_agent", "random_batch", "constant_ensemble", "set_critics",
    "flat_state", "fill_buffer", "make_rng",
]
