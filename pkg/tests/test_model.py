import numpy as np
import pytest

from ranklsd import tensor as T
from ranklsd.gradcheck import check_end_to_end, tiny_model_config
from ranklsd.losses import LossWeights
from ranklsd.metrics import ImagePredictions, sap
from ranklsd.inference import detect
from ranklsd.model import checkpoint
from ranklsd.model.detector import Detector, ModelConfig
from ranklsd.model.encoder import DeformableAttention, EncoderLayer
from ranklsd.model.train import AdamW, OptimConfig, prepare_item, train_step
from ranklsd.synthdata import SceneSpec, generate
from ranklsd.tensor import Tensor

CFG = tiny_model_config()


def forward(model, img):
    with T.no_grad(), T.new_tape():
        return model(img)


def image(kind, S=16, seed=0):
    if kind == "zero":
        a = np.zeros((1, S, S))
    elif kind == "one":
        a = np.ones((1, S, S))
    else:
        a = np.random.default_rng(seed).random((1, S, S))
    return Tensor(a)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(levels=(64, 16))
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(referring_points=0)
    with pytest.raises(ValueError):
        ModelConfig(rotation_aggregate="median")


def test_backbone_shapes_finite_and_deterministic():
    m = Detector(CFG)
    with T.no_grad():
        f1 = m.backbone_forward(image("zero"))
        f2 = m.backbone_forward(image("zero"))
    assert [f.shape for f in f1] == [(16, r, r) for r in CFG.levels]
    assert all(np.isfinite(f.data).all() for f in f1)
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(f1, f2))


def test_wrong_input_size_rejected():
    with pytest.raises(T.ShapeError):
        forward(Detector(CFG), image("noise", S=32))


@pytest.mark.parametrize("kind", ["zero", "one", "noise"])
def test_outputs_finite_and_shaped(kind):
    out = forward(Detector(CFG), image(kind))
    G = CFG.levels[0]
    assert out.score_map.shape == (G, G) and out.loc_map.shape == (G, G, 4)
    assert np.all((out.score_map.data > 0) & (out.score_map.data < 1))
    assert [j.shape for j in out.junction_maps] == [(r, r) for r in CFG.levels]
    for t in [out.score_map, out.loc_map, *out.junction_maps, *out.edge_maps]:
        assert np.isfinite(t.data).all()
    for t in [*out.junction_maps, *out.edge_maps]:
        assert t.data.min() >= 0 and t.data.max() <= 1


def test_encoder_preserves_shapes_across_depths():
    for layers in (0, 1, 3):
        m = Detector(CFG.replace(encoder_layers=layers))
        with T.no_grad():
            feats = m.deformable_encoder(m.backbone_forward(image("noise")))
        assert [f.shape for f in feats] == [(16, r, r) for r in CFG.levels]


def test_degenerate_attention_is_identity():
    rng = np.random.default_rng(0)
    D, r = 8, 4
    att = DeformableAttention(rng, D, 1, (r,), 1)
    att.offsets.bias.data[:] = 0.0  # sample exactly at the token's own location
    att.value.weight.data[:] = np.eye(D)
    att.value.bias.data[:] = 0.0
    att.out.weight.data[:] = np.eye(D)
    att.out.bias.data[:] = 0.0
    x = Tensor(rng.normal(size=(r * r, D)))
    with T.no_grad():
        y = att(x, x)
    np.testing.assert_allclose(y.data, x.data, atol=1e-12)

    layer = EncoderLayer(rng, D, 1, (r,), 1, 16)
    layer.attn = att
    with T.no_grad():
        got = layer(x, Tensor(np.zeros((r * r, D)))).data
        h = layer.norm1(T.add(x, x))
        want = layer.norm2(T.add(h, layer.ff2(T.relu(layer.ff1(h))))).data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_sampling_offset_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    D, levels = 8, (4, 2)
    att = DeformableAttention(rng, D, 2, levels, 2)
    att.offsets.bias.data[:] = rng.normal(0, 0.7, size=att.offsets.bias.shape)
    x = Tensor(rng.normal(size=(20, D)))
    proj = rng.normal(size=(20, D))

    def f():
        return T.sum_(T.mul(att(x, x), Tensor(proj)))

    with T.new_tape() as tape:
        tape.backward(f())
    ana = att.offsets.bias.grad.copy()
    num = np.zeros_like(ana)
    b = att.offsets.bias.data
    with T.no_grad():
        for k in range(b.size):
            old = b[k]
            b[k] = old + 1e-5
            att.offsets.bias.mark_dirty()
            hi = f().item()
            b[k] = old - 1e-5
            att.offsets.bias.mark_dirty()
            lo = f().item()
            b[k] = old
            att.offsets.bias.mark_dirty()
            num[k] = (hi - lo) / 2e-5
    err = np.abs(ana - num).max() / max(np.abs(ana).max(), np.abs(num).max(), 1e-6)
    assert err <= 1e-4


def test_rotation_disabled_identical_to_plain():
    m = Detector(CFG)
    with pytest.raises(ValueError):
        m.forward_with_rotation_augment(image("noise"))
    a = forward(m, image("noise"))
    b = forward(Detector(CFG), image("noise"))
    assert a.score_map.data.tobytes() == b.score_map.data.tobytes()


def test_rotation_constant_image_matches_single_pass():
    plain = Detector(CFG)
    rot = Detector(CFG.replace(rotation_augment=True))
    img = Tensor(np.full((1, 16, 16), 0.37))
    with T.no_grad():
        fa = plain.features(img)
        fb = rot.features(img)
    for a, b in zip(fa, fb):
        assert np.max(np.abs(a.data - b.data)) <= 1e-12
    out = forward(rot, img)
    assert out.loc_map.shape == (16, 16, 4)


def test_rotation_non_square_rejected():
    rot = Detector(CFG.replace(rotation_augment=True))
    with pytest.raises(T.ShapeError):
        with T.no_grad():
            rot.features(Tensor(np.zeros((1, 16, 8))))


def test_untrained_model_has_near_zero_sap():
    spec = SceneSpec(image_size=16, min_length=4, max_length=10, margin=1, collision_grid=16)
    m = Detector(CFG)
    ims = []
    for i in range(10):
        s = generate(spec, i)
        d = detect(s.image, m)
        ims.append(ImagePredictions(d.segs, d.scores, s.gt_array))
    assert sap(ims, 10) < 0.05


def test_checkpoint_round_trip_bit_identical(tmp_path):
    m = Detector(CFG)
    for p in m.parameters():
        p.data += np.random.default_rng(5).normal(0, 0.01, size=p.shape)
    img = image("noise")
    p = tmp_path / "m.ckpt"
    checkpoint.save(p, "model.hidden_dim = 16\n", m, {"extra.x": np.arange(3.0)})
    text, tensors = checkpoint.read(p)
    assert text == "model.hidden_dim = 16\n"
    assert np.array_equal(tensors["extra.x"], np.arange(3.0))
    m2 = Detector(CFG.replace(seed=99))
    checkpoint.load_into(m2, tensors)
    a, b = forward(m, img), forward(m2, img)
    assert a.score_map.data.tobytes() == b.score_map.data.tobytes()
    assert a.loc_map.data.tobytes() == b.loc_map.data.tobytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"garbage")
    m = Detector(CFG)
    buf = checkpoint.encode("a = 1\n", {n: p.data for n, p in m.named_parameters()})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(buf[:-3])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_into(Detector(CFG.replace(hidden_dim=32, heads=2)), checkpoint.decode(buf)[1])


def items(n=3):
    spec = SceneSpec(image_size=16, min_length=4, max_length=10, margin=1, collision_grid=16)
    return [prepare_item(generate(spec, i), i, CFG.levels) for i in range(n)]


def test_zero_weights_only_decay_parameters():
    m = Detector(CFG)
    before = [p.data.copy() for p in m.parameters()]
    cfg = OptimConfig(lr=1e-2, weight_decay=1e-2)
    opt = AdamW(list(m.named_parameters()), cfg)
    train_step(m, items(1), opt, LossWeights(0, 0, 0, 0, 0), 0)
    for b, p in zip(before, m.parameters()):
        np.testing.assert_allclose(p.data, b * (1 - 1e-2 * 1e-2), rtol=0, atol=1e-15)


def test_position_loss_decreases_on_single_segment_scene():
    spec = SceneSpec(image_size=16, min_segments=1, max_segments=1, min_length=5, max_length=10,
                     margin=1, collision_grid=16)
    it = [prepare_item(generate(spec, 0), 0, CFG.levels)]
    m = Detector(CFG)
    opt = AdamW(list(m.named_parameters()), OptimConfig(lr=5e-4))
    pos = [train_step(m, it, opt, LossWeights(), s)["pos"] for s in range(50)]
    assert pos[-1] < pos[0]
    assert np.mean(pos[-10:]) < np.mean(pos[:10])


def test_train_step_deterministic():
    def run():
        m = Detector(CFG)
        opt = AdamW(list(m.named_parameters()), OptimConfig())
        data = items(3)
        return [train_step(m, [data[s % 3]], opt, LossWeights(), s, seed=7)["total"] for s in range(100)]

    assert run() == run()


def test_train_step_requires_clear_tape():
    m = Detector(CFG)
    opt = AdamW(list(m.named_parameters()), OptimConfig())
    with T.new_tape():
        T.mul(Tensor([1.0], requires_grad=True), 2.0)
        with pytest.raises(T.TapeError):
            train_step(m, items(1), opt, LossWeights(), 0)


def test_lr_schedule():
    c = OptimConfig(lr=1.0, steps=100)
    assert c.milestone_steps() == [50, 75]
    assert [c.lr_at(s) for s in (0, 49, 50, 74, 75, 99)] == [1.0, 1.0, 0.1, 0.1, pytest.approx(0.01), pytest.approx(0.01)]


def test_end_to_end_gradcheck_tiny():
    rep = check_end_to_end(probes=32, seed=0)
    assert rep.ok
    assert max(r.worst for r in rep.results) <= 1e-3
