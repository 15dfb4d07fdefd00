import numpy as np
import pytest
import torch

from aasgan import nncore
from aasgan.models import (
    AugmenterModel,
    ContractError,
    DecoderConfig,
    DiscriminatorModel,
    GeneratorModel,
    SceneBatch,
    decode,
    encode,
    init_decoder_state,
    pool,
)
from fdcheck import check, leaf


def zero_all(store):
    with torch.no_grad():
        for p in store.parameters():
            p.zero_()


def randomise(store, rng, scale=0.4):
    with torch.no_grad():
        for p in store.parameters():
            p.copy_(torch.tensor(rng.normal(0, scale, tuple(p.shape))))


def make(kind, tiny_dims, t_obs=3, t_pred=6, seed=0):
    enc, pool_cfg, dec = tiny_dims
    gen = nncore.make_generator(seed)
    if kind == "D":
        return DiscriminatorModel(t_pred, enc, 4, gen)
    cls = AugmenterModel if kind == "A" else GeneratorModel
    return cls(t_obs, t_pred, enc, pool_cfg, dec, gen)


def random_batch(rng, n_peds, T, spread=2.0):
    steps = rng.normal(0.3, 0.2, (n_peds, T - 1, 2))
    rel = np.concatenate([np.zeros((n_peds, 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    return SceneBatch.single_scene(rel, rng.uniform(-spread, spread, (n_peds, 2)))


def pool_oracle(hidden, positions, store, prefix):
    W_d, b_d = (store[f"{prefix}.disp.{k}"].detach().numpy() for k in "Wb")
    W_m, b_m = (store[f"{prefix}.mlp.{k}"].detach().numpy() for k in "Wb")
    n = len(hidden)
    out = np.zeros((n, W_m.shape[1]))
    for i in range(n):
        feats = []
        for j in range(n):
            if j != i:
                e = np.maximum((positions[j] - positions[i]) @ W_d + b_d, 0)
                feats.append(np.maximum(np.concatenate([e, hidden[j]]) @ W_m + b_m, 0))
        if feats:
            out[i] = np.max(feats, axis=0)
    return out


class TestEncode:
    def test_zero_weights(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        zero_all(G.params)
        h = encode(torch.tensor(rng.normal(size=(2, 5, 2))), G.params, "enc")
        assert h.abs().sum() == 0

    def test_weight_sharing(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        x = torch.tensor(rng.normal(size=(1, 4, 2)))
        h = encode(torch.cat([x, x, x + 1]), G.params, "enc")
        assert torch.equal(h[0], h[1]) and not torch.equal(h[0], h[2])

    def test_gradient(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        x = leaf(rng.normal(size=(3, 4, 2)))
        proj = torch.tensor(rng.normal(size=(3, tiny_dims[0].hidden_dim)))
        params = [G.params[n] for n in G.params if n.startswith("enc.")]
        assert check(lambda: (encode(x, G.params, "enc") * proj).sum(), [x, *params]) < 1e-4


class TestPool:
    def test_single_pedestrian_is_zero(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        p = pool(torch.tensor(rng.normal(size=(1, 6))), torch.zeros(1, 2, dtype=torch.float64), G.params, "pool")
        assert p.abs().sum() == 0

    def test_brute_force_oracle(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        for n in (1, 2, 3):
            h, pos = rng.normal(size=(n, 6)), rng.normal(size=(n, 2))
            got = pool(torch.tensor(h), torch.tensor(pos), G.params, "pool").detach().numpy()
            np.testing.assert_allclose(got, pool_oracle(h, pos, G.params, "pool"), rtol=1e-12, atol=1e-14)

    def test_scenes_do_not_mix(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        h, pos = rng.normal(size=(5, 6)), rng.normal(size=(5, 2))
        ids, slot = torch.tensor([0, 0, 1, 1, 1]), torch.tensor([0, 1, 0, 1, 2])
        got = pool(torch.tensor(h), torch.tensor(pos), G.params, "pool", ids, slot, 2, 3).detach().numpy()
        np.testing.assert_allclose(got[:2], pool_oracle(h[:2], pos[:2], G.params, "pool"), atol=1e-14)
        np.testing.assert_allclose(got[2:], pool_oracle(h[2:], pos[2:], G.params, "pool"), atol=1e-14)

    def test_permutation_equivariant(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        h, pos = torch.tensor(rng.normal(size=(3, 6))), torch.tensor(rng.normal(size=(3, 2)))
        perm = torch.tensor([2, 0, 1])
        a = pool(h, pos, G.params, "pool")[perm]
        b = pool(h[perm], pos[perm], G.params, "pool")
        torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_empty(self, tiny_dims):
        G = make("G", tiny_dims)
        with pytest.raises(ValueError):
            pool(torch.zeros(0, 6, dtype=torch.float64), torch.zeros(0, 2, dtype=torch.float64), G.params, "pool")

    def test_gradient(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        h, pos = leaf(rng.normal(size=(3, 6))), leaf(rng.normal(size=(3, 2)))
        proj = torch.tensor(rng.normal(size=(3, 4)))
        params = [G.params[n] for n in G.params if n.startswith("pool.")]
        assert check(lambda: (pool(h, pos, G.params, "pool") * proj).sum(), [h, pos, *params]) < 1e-4


class TestDecoder:
    def test_zero_state(self, tiny_dims):
        G = make("G", tiny_dims)
        zero_all(G.params)
        h, c = init_decoder_state(torch.zeros(2, 10, dtype=torch.float64), torch.zeros(2, 2, dtype=torch.float64),
                                  G.params, "dec")
        assert h.abs().sum() == 0 and c.abs().sum() == 0

    def test_noise_occupies_tail(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        ctx = torch.tensor(rng.normal(size=(2, 10)))
        h1, _ = init_decoder_state(ctx, torch.tensor(rng.normal(size=(2, 2))), G.params, "dec")
        h2, _ = init_decoder_state(ctx, torch.tensor(rng.normal(size=(2, 2))), G.params, "dec")
        assert torch.equal(h1[:, :-2], h2[:, :-2]) and (h1[:, -2:] != h2[:, -2:]).all()

    def test_one_step(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        batch = random_batch(rng, 2, 3)
        h = torch.tensor(rng.normal(size=(2, 6)))
        out = decode(h, torch.zeros_like(h), batch.rel[:, -1], G.params, "dec", 1, batch)
        assert out.shape == (2, 1, 2)

    def test_zero_weights_give_output_bias(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        zero_all(G.params)
        with torch.no_grad():
            G.params["dec.out.b"].copy_(torch.tensor([0.3, -0.7], dtype=torch.float64))
        batch = random_batch(rng, 3, 3)
        out = G.predict(batch, torch.tensor(rng.normal(size=(3, 2))))
        assert (out == torch.tensor([0.3, -0.7], dtype=torch.float64)).all()

    def test_state_gradient(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        randomise(G.params, rng)
        batch = random_batch(rng, 3, 3)
        ctx, z = leaf(rng.normal(size=(3, 10))), leaf(rng.normal(size=(3, 2)))
        last = leaf(batch.rel[:, -1].numpy())
        proj = torch.tensor(rng.normal(size=(3, 3, 2)))

        def f():
            h, c = init_decoder_state(ctx, z, G.params, "dec")
            return (decode(h, c, last, G.params, "dec", 3, batch) * proj).sum()

        params = [G.params[n] for n in G.params if n.startswith("dec.")]
        assert check(f, [ctx, z, last, *params]) < 1e-4

    def test_pool_dim_contract(self):
        with pytest.raises(ValueError):
            DecoderConfig(4, 6, 3, 4)


class TestNetworks:
    def test_augment_length_and_start(self, tiny_dims, rng):
        A = make("A", tiny_dims)
        batch = random_batch(rng, 3, 6)
        a = A.augment(batch, torch.tensor(rng.normal(size=(3, 2))))
        assert a.shape == (3, 6, 2)
        assert torch.equal(a[:, 0], batch.rel[:, 0])

    def test_augment_deterministic(self, tiny_dims, rng):
        A = make("A", tiny_dims)
        batch = random_batch(rng, 2, 6)
        z = torch.tensor(rng.normal(size=(2, 2)))
        assert torch.equal(A(batch, z), A(batch, z))

    def test_predict_noise_dependence(self, tiny_dims, rng):
        G = make("G", tiny_dims)
        batch = random_batch(rng, 2, 3)
        a = G.predict(batch, torch.tensor(rng.normal(size=(2, 2))))
        b = G.predict(batch, torch.tensor(rng.normal(size=(2, 2))))
        assert a.shape == (2, 3, 2) and not torch.equal(a, b)

    def test_obs8_pred20_lengths(self, tiny_dims, rng):
        enc, pool_cfg, dec = tiny_dims
        G = GeneratorModel(8, 20, enc, pool_cfg, dec)
        assert G.predict(random_batch(rng, 2, 8), torch.zeros(2, 2, dtype=torch.float64)).shape[1] == 12

    def test_contracts(self, tiny_dims, rng):
        A, G, D = make("A", tiny_dims), make("G", tiny_dims), make("D", tiny_dims)
        z = torch.zeros(2, 2, dtype=torch.float64)
        with pytest.raises(ContractError):
            A.augment(random_batch(rng, 2, 5), z)
        with pytest.raises(ContractError):
            G.predict(random_batch(rng, 2, 6), z)
        with pytest.raises(ContractError):
            D(random_batch(rng, 2, 3).rel)
        with pytest.raises(nncore.ShapeError):
            G.predict(random_batch(rng, 2, 3), torch.zeros(2, 3, dtype=torch.float64))

    def test_discriminator_zero_weights(self, tiny_dims, rng):
        D = make("D", tiny_dims)
        zero_all(D.params)
        assert (D(torch.tensor(rng.normal(size=(4, 6, 2)))) == 0.5).all()

    def test_batched_scenes_match_individual(self, tiny_dims, toy_real):
        enc, pool_cfg, dec = tiny_dims
        G = GeneratorModel(8, 20, enc, pool_cfg, dec)
        scenes = toy_real[:4]
        batch = SceneBatch.from_scenes(scenes).prefix(8)
        z = nncore.sample_standard_normal((batch.n_peds, 2), nncore.make_generator(0))
        joint = G.predict(batch, z)
        parts, k = [], 0
        for s in scenes:
            b = SceneBatch.from_scenes([s]).prefix(8)
            parts.append(G.predict(b, z[k:k + b.n_peds]))
            k += b.n_peds
        torch.testing.assert_close(joint, torch.cat(parts), rtol=1e-13, atol=1e-13)

    def test_header_round_trip(self, tiny_dims):
        for kind, cls in (("A", AugmenterModel), ("G", GeneratorModel), ("D", DiscriminatorModel)):
            m = make(kind, tiny_dims)
            clone = cls.from_header(m.header())
            assert clone.params.names() == m.params.names()
            assert [p.shape for p in clone.params.parameters()] == [p.shape for p in m.params.parameters()]


def _model_grad_cases(tiny_dims, rng):
    A, G, D = make("A", tiny_dims), make("G", tiny_dims), make("D", tiny_dims)
    for m in (A, G, D):
        randomise(m.params, rng)
    n = int(rng.integers(1, 4))
    full = random_batch(rng, n, 6)
    z = leaf(rng.normal(size=(n, 2)))
    rel = leaf(full.rel.numpy())
    obs_rel = leaf(full.rel[:, :3].numpy())
    proj_a, proj_g = torch.tensor(rng.normal(size=(n, 6, 2))), torch.tensor(rng.normal(size=(n, 3, 2)))
    proj_d = torch.tensor(rng.normal(size=n))
    return [
        ("augment", lambda: (A(full.with_rel(rel), z) * proj_a).sum(), [rel, z, *A.params.parameters()]),
        ("predict", lambda: (G(full.with_rel(obs_rel), z) * proj_g).sum(), [obs_rel, z, *G.params.parameters()]),
        ("discriminate", lambda: (D(rel) * proj_d).sum(), [rel, *D.params.parameters()]),
    ]


@pytest.mark.parametrize("seed", [0, 1])
def test_network_gradients(tiny_dims, seed):
    rng = np.random.default_rng(seed)
    for name, f, tensors in _model_grad_cases(tiny_dims, rng):
        assert check(f, tensors) < 1e-4, name
