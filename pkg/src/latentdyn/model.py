"""Sequential VAE: shared-weight mixer encoder/decoder over spectral
patches, GRU temporal model, Gaussian factor heads.

All timesteps go through the spatial paths as one batched 2-d matmul per
layer; only the GRU runs step by step.
"""

from dataclasses import dataclass

import numpy as np

from .diffcore import SeededRng, Tensor, concat, reparam_sample
from .spectral import patch_indices

LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 2.0
LOG_SIGMA_INIT = -2.0


@dataclass(frozen=True)
class ModelConfig:
    n_factors: int = 16
    encoder_output: int = 128
    k_clusters: int = 128  # per hemisphere
    embed_dim: int = 128
    encoder_feature_sizes: tuple = (64, 32, 16, 8, 4, 1)
    decoder_feature_sizes: tuple = (4, 8, 16, 32, 64, 128)
    gru_hidden: int = 128
    patch_hidden: int = 128
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        enc, dec = self.encoder_feature_sizes, self.decoder_feature_sizes
        if len(enc) % 2 or len(dec) != len(enc):
            raise ValueError("feature size lists must have equal even length")
        # the decoder walks the encoder's feature-size chain backwards
        enc_chain = [self.embed_dim, *enc]
        dec_chain = [enc[-1], *dec]
        if dec_chain != enc_chain[::-1]:
            raise ValueError(
                f"decoder sizes {dec} do not mirror encoder sizes {enc} "
                f"from embedding width {self.embed_dim}")

    @property
    def n_mixer_layers(self):
        return len(self.encoder_feature_sizes) // 2


@dataclass
class FactorSequence:
    mu: Tensor  # T x n_factors
    log_sigma: Tensor  # T x n_factors
    z: Tensor  # T x n_factors

    def __post_init__(self):
        if not (self.mu.dims == self.log_sigma.dims == self.z.dims):
            raise ValueError("factor sequence shapes disagree")


def _mlp_pairs(in_size, sizes):
    """(f_in, hidden, f_out) triples walking a feature-size chain."""
    chain = [in_size, *sizes]
    return [(chain[2 * i], chain[2 * i + 1], chain[2 * i + 2])
            for i in range(len(sizes) // 2)]


def _fan_in_uniform(rng, fan_in, fan_out):
    # fan-in scaling keeps activation variance roughly constant through the
    # deep mixer stacks; averaged-fan scaling attenuates z ~30x by the
    # decoder output, leaving reconstruction gradients too weak to use it
    a = np.sqrt(3.0 / fan_in)
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _add_linear(params, name, fan_in, fan_out, seed):
    rng = SeededRng(seed, f"init/{name}")
    params[f"{name}/w"] = Tensor(_fan_in_uniform(rng, fan_in, fan_out),
                                 requires_grad=True)
    params[f"{name}/b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def _add_square(params, name, size, seed):
    rng = SeededRng(seed, f"init/{name}")
    params[name] = Tensor(_fan_in_uniform(rng, size, size), requires_grad=True)


class Model:
    """Bundles configuration, cluster bookkeeping, and parameters."""

    def __init__(self, cfg, ca, seed):
        self.cfg = cfg
        self.ca = ca
        self.seed = int(seed)
        if ca.k_per_hemisphere != cfg.k_clusters:
            raise ValueError(
                f"config expects {cfg.k_clusters} clusters per hemisphere, "
                f"assignment has {ca.k_per_hemisphere}")
        self.hemi_ids = {h: np.flatnonzero(ca.hemisphere == h)
                         for h in ("L", "R")}
        self.gather = {}
        self.mask = {}
        self.scatter = {}
        for h in ("L", "R"):
            gather, mask = patch_indices(ca, h)
            self.gather[h], self.mask[h] = gather, mask
            inv = np.empty(self.hemi_ids[h].size, dtype=np.intp)
            real = mask > 0
            inv[gather[real]] = np.flatnonzero(real)
            self.scatter[h] = inv
        order = np.concatenate([self.hemi_ids["L"], self.hemi_ids["R"]])
        self.vertex_unshuffle = np.argsort(order)
        self.params = self._init_params()

    # -- parameters ----------------------------------------------------------

    def _mixer_stack(self, params, prefix, in_size, sizes):
        cfg = self.cfg
        for i, (f_in, hidden, f_out) in enumerate(_mlp_pairs(in_size, sizes)):
            _add_linear(params, f"{prefix}/mix{i}/feat1", f_in, hidden,
                        self.seed)
            _add_linear(params, f"{prefix}/mix{i}/feat2", hidden, f_out,
                        self.seed)
            _add_linear(params, f"{prefix}/mix{i}/patch1", cfg.k_clusters,
                        cfg.patch_hidden, self.seed)
            _add_linear(params, f"{prefix}/mix{i}/patch2", cfg.patch_hidden,
                        cfg.k_clusters, self.seed)

    def _init_params(self):
        cfg = self.cfg
        m = self.ca.max_cluster_size
        params = {}
        for h in ("L", "R"):
            _add_linear(params, f"enc/embed_{h}", m, cfg.embed_dim, self.seed)
        self._mixer_stack(params, "enc", cfg.embed_dim,
                          cfg.encoder_feature_sizes)
        f_last = cfg.encoder_feature_sizes[-1]
        _add_linear(params, "enc/concat", 2 * cfg.k_clusters * f_last,
                    cfg.encoder_output, self.seed)
        for gate in ("r", "u", "c"):
            _add_linear(params, f"gru/w_{gate}", cfg.encoder_output,
                        cfg.gru_hidden, self.seed)
            _add_square(params, f"gru/u_{gate}", cfg.gru_hidden, self.seed)
        _add_linear(params, "heads/mu", cfg.gru_hidden, cfg.n_factors,
                    self.seed)
        _add_linear(params, "heads/log_sigma", cfg.gru_hidden, cfg.n_factors,
                    self.seed)
        # start posteriors tight: at sigma ~= 1 the sampled z is noise and
        # the decoder learns to ignore it before mu can become informative
        params["heads/log_sigma/b"].data[:] = LOG_SIGMA_INIT
        _add_linear(params, "dec/in", cfg.n_factors,
                    2 * cfg.k_clusters * f_last, self.seed)
        self._mixer_stack(params, "dec", f_last, cfg.decoder_feature_sizes)
        for h in ("L", "R"):
            _add_linear(params, f"dec/out_{h}", cfg.decoder_feature_sizes[-1],
                        m, self.seed)
        return params

    def recurrent_weight_names(self):
        return [f"gru/u_{g}" for g in ("r", "u", "c")]

    # -- layers ---------------------------------------------------------------

    def _affine(self, x, name):
        return x @ self.params[f"{name}/w"] + self.params[f"{name}/b"]

    def _mixer_layer(self, x, prefix, i, t_steps, f_in, f_out):
        """One mixer layer on a [T*k, f_in] tensor: feature mix, patch mix."""
        k = self.cfg.k_clusters
        h = self._affine(x, f"{prefix}/mix{i}/feat1").elu()
        x = self._affine(h, f"{prefix}/mix{i}/feat2")
        x = x.reshape(t_steps, k, f_out).permute(0, 2, 1)
        x = x.reshape(t_steps * f_out, k)
        h = self._affine(x, f"{prefix}/mix{i}/patch1").elu()
        x = self._affine(h, f"{prefix}/mix{i}/patch2")
        x = x.reshape(t_steps, f_out, k).permute(0, 2, 1)
        return x.reshape(t_steps * k, f_out)

    def spatial_encode(self, x):
        """x: numpy [T, V] -> embedding Tensor [T, encoder_output]."""
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        t_steps = x.shape[0]
        if x.shape[1] != self.ca.assignment.size:
            raise ValueError(f"encoder expects {self.ca.assignment.size} "
                             f"vertices, got {x.shape[1]}")
        k, m = cfg.k_clusters, self.ca.max_cluster_size
        halves = []
        for h in ("L", "R"):
            patches = x[:, self.hemi_ids[h]][:, self.gather[h]] * self.mask[h]
            out = Tensor(patches.reshape(t_steps * k, m))
            out = self._affine(out, f"enc/embed_{h}")
            pairs = _mlp_pairs(cfg.embed_dim, cfg.encoder_feature_sizes)
            for i, (f_in, _, f_out) in enumerate(pairs):
                out = self._mixer_layer(out, "enc", i, t_steps, f_in, f_out)
            f_last = cfg.encoder_feature_sizes[-1]
            halves.append(out.reshape(t_steps, k * f_last))
        both = concat(halves, axis=1)
        return self._affine(both, "enc/concat").elu()

    def gru_step(self, e_t, h_prev):
        """e_t: [1, encoder_output], h_prev: [1, gru_hidden] -> h_t."""
        p = self.params
        r = (e_t @ p["gru/w_r/w"] + h_prev @ p["gru/u_r"]
             + p["gru/w_r/b"]).sigmoid()
        u = (e_t @ p["gru/w_u/w"] + h_prev @ p["gru/u_u"]
             + p["gru/w_u/b"]).sigmoid()
        c = (e_t @ p["gru/w_c/w"] + (r * h_prev) @ p["gru/u_c"]
             + p["gru/w_c/b"]).tanh()
        one_minus_u = 1.0 - u
        return one_minus_u * h_prev + u * c

    def gru_sequence(self, e):
        """e: [T, encoder_output] -> hidden states [T, gru_hidden]."""
        t_steps = e.dims[0]
        p = self.params
        # input-side projections for every timestep in one matmul per gate
        pre_r = e @ p["gru/w_r/w"] + p["gru/w_r/b"]
        pre_u = e @ p["gru/w_u/w"] + p["gru/w_u/b"]
        pre_c = e @ p["gru/w_c/w"] + p["gru/w_c/b"]
        h = Tensor(np.zeros((1, self.cfg.gru_hidden)))
        states = []
        for t in range(t_steps):
            r = (pre_r.slice_axis(0, t, t + 1) + h @ p["gru/u_r"]).sigmoid()
            u = (pre_u.slice_axis(0, t, t + 1) + h @ p["gru/u_u"]).sigmoid()
            c = (pre_c.slice_axis(0, t, t + 1)
                 + (r * h) @ p["gru/u_c"]).tanh()
            h = (1.0 - u) * h + u * c
            states.append(h)
        return concat(states, axis=0)

    def factor_heads(self, h):
        mu = self._affine(h, "heads/mu")
        log_sigma = self._affine(h, "heads/log_sigma").clamp(LOG_SIGMA_MIN,
                                                             LOG_SIGMA_MAX)
        return mu, log_sigma

    def spatial_decode(self, z):
        """z: [T, n_factors] Tensor -> reconstruction Tensor [T, V]."""
        cfg = self.cfg
        t_steps = z.dims[0]
        k, m = cfg.k_clusters, self.ca.max_cluster_size
        f0 = cfg.encoder_feature_sizes[-1]
        both = self._affine(z, "dec/in").elu()
        halves = []
        for j, h in enumerate(("L", "R")):
            half = both.slice_axis(1, j * k * f0, (j + 1) * k * f0)
            out = half.reshape(t_steps * k, f0)
            pairs = _mlp_pairs(f0, cfg.decoder_feature_sizes)
            for i, (f_in, _, f_out) in enumerate(pairs):
                out = self._mixer_layer(out, "dec", i, t_steps, f_in, f_out)
            out = self._affine(out, f"dec/out_{h}").tanh()
            flat = out.reshape(t_steps, k * m)
            halves.append(flat.take_cols(self.scatter[h]))
        full = concat(halves, axis=1)
        return full.take_cols(self.vertex_unshuffle)

    def forward(self, x, rng=None, sample=True):
        """Encode, run the GRU, sample factors, decode.

        Factors at step t depend only on x[:t+1] (causal teacher forcing).
        With sample=False (evaluation) z is the posterior mean.
        """
        e = self.spatial_encode(x)
        h = self.gru_sequence(e)
        mu, log_sigma = self.factor_heads(h)
        if sample:
            if rng is None:
                raise ValueError("sampling requires an rng")
            z = reparam_sample(mu, log_sigma, rng)
        else:
            z = mu
        xhat = self.spatial_decode(z)
        return FactorSequence(mu, log_sigma, z), xhat

    def count_parameters(self):
        return count_parameters(self.params)


def count_parameters(params):
    return int(sum(t.data.size for t in params.values()))


def baseline_params(v_left, v_right, cfg, seed=0):
    """Dense per-hemisphere encoder/decoder with the same temporal model;
    the parameter-count comparison point.
    """
    params = {}
    for h, v in (("L", v_left), ("R", v_right)):
        _add_linear(params, f"enc/dense_{h}", v, cfg.embed_dim, seed)
    _add_linear(params, "enc/concat", 2 * cfg.embed_dim, cfg.encoder_output,
                seed)
    for gate in ("r", "u", "c"):
        _add_linear(params, f"gru/w_{gate}", cfg.encoder_output,
                    cfg.gru_hidden, seed)
        _add_square(params, f"gru/u_{gate}", cfg.gru_hidden, seed)
    _add_linear(params, "heads/mu", cfg.gru_hidden, cfg.n_factors, seed)
    _add_linear(params, "heads/log_sigma", cfg.gru_hidden, cfg.n_factors, seed)
    _add_linear(params, "dec/in", cfg.n_factors, 2 * cfg.embed_dim, seed)
    for h, v in (("L", v_left), ("R", v_right)):
        _add_linear(params, f"dec/dense_{h}", cfg.embed_dim, v, seed)
    return params
