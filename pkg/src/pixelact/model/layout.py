"""Per-timestep token layout and the custom attention mask.

Within a timestep the order is [text, image x N_i, thinking, a_in,
ground-truth action x 8]. The mask is block-causal across timesteps with
three special rules inside a timestep:

  * the action prediction token a_in may attend text/image/thinking of its
    own timestep and itself, but never the same timestep's ground-truth
    action tokens (no label leakage);
  * no token other than a_in itself ever attends an a_in token, at any
    timestep (training stability);
  * text/image/thinking tokens do not attend the same timestep's
    ground-truth action tokens. The ground-truth tokens themselves attend
    the whole timestep group. This ordering is what makes incremental
    decoding with a KV cache reproduce the batch forward exactly: at
    deployment the action for timestep i is only known after a_in(i) has
    been decoded, so tokens processed earlier can never have seen it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig

ROLE_TEXT = 0
ROLE_IMAGE = 1
ROLE_THINK = 2
ROLE_AIN = 3
ROLE_ACTION = 4

N_ROLES = 5

# text/image/thinking: the observation-side group
_OBS_ROLES = (ROLE_TEXT, ROLE_IMAGE, ROLE_THINK)


@dataclass(frozen=True)
class TokenLayout:
    """Roles of the tokens inside one timestep, in order."""

    roles: tuple

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "TokenLayout":
        roles = [ROLE_TEXT] + [ROLE_IMAGE] * cfg.number_of_image_tokens
        if cfg.use_thinking_token:
            roles.append(ROLE_THINK)
        roles += [ROLE_AIN] + [ROLE_ACTION] * cfg.n_action_tokens
        return cls(roles=tuple(roles))

    @property
    def tokens_per_step(self) -> int:
        return len(self.roles)

    @property
    def ain_offset(self) -> int:
        return self.roles.index(ROLE_AIN)

    def type_ids(self, timesteps: int) -> np.ndarray:
        return np.tile(np.array(self.roles, dtype=np.int64), timesteps)


def build_mask(timesteps: int, layout: TokenLayout) -> np.ndarray:
    """Boolean [S, S] attendability matrix, True = query may attend key."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    n = layout.tokens_per_step
    roles = np.array(layout.roles, dtype=np.int64)
    ts = np.repeat(np.arange(timesteps), n)
    role = np.tile(roles, timesteps)

    q_ts, k_ts = ts[:, None], ts[None, :]
    q_role, k_role = role[:, None], role[None, :]

    past = k_ts < q_ts
    same = k_ts == q_ts
    k_obs = (k_role == ROLE_TEXT) | (k_role == ROLE_IMAGE) | (k_role == ROLE_THINK)
    q_obs = (q_role == ROLE_TEXT) | (q_role == ROLE_IMAGE) | (q_role == ROLE_THINK)

    mask = past & (k_role != ROLE_AIN)
    # a_in attends only itself among a_in tokens; nothing else ever does
    mask |= same & (q_role == ROLE_AIN) & (k_role == ROLE_AIN)
    mask |= same & (q_role == ROLE_AIN) & k_obs
    mask |= same & q_obs & k_obs
    mask |= same & (q_role == ROLE_ACTION) & (k_obs | (k_role == ROLE_ACTION))
    return mask
