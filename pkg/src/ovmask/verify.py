"""Release-gate invariant suite: gradient checks, loss identities, masking
disjointness, token-count parity, PE interpolation and dropout semantics,
and byte-exact round trips. One machine-parseable line per check."""

import os
import tempfile

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import (
    DualEncoderModel,
    ModelConfig,
    TextConfig,
    ViTConfig,
    apply_ped,
    interpolate_pe,
    pad_or_truncate,
    sinusoidal_pe_2d,
)
from .losses import (
    ContrastiveBatch,
    ReconBatch,
    infonce_i2t,
    make_fd_loss,
    pretrain_step_loss,
    recon_loss,
    sample_mask,
)
from .scoring import ensemble_score
from .world import Vocabulary, generate_pretrain_dataset, read_dataset, write_dataset


def _toy_model(seed=0):
    vit = ViTConfig(image_size=8, patch_size=4, depth=1, width=8, heads=2, ped_prob=0.5)
    text = TextConfig(vocab_size=12, max_len=6, depth=1, width=8, heads=2, out_width=8)
    return DualEncoderModel(ModelConfig(vit=vit, text=text), seed=seed)


def _toy_batch(rng, b=2):
    images = rng.normal(size=(b, 8, 8, 3)).astype(np.float32)
    ids = np.stack([pad_or_truncate([2 + i, 3], 6) for i in range(b)])
    return images, ids


def check_grad_elementwise():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(5):
        x = Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
        y = Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
        scale = Tensor((1.0 + 0.1 * rng.normal(size=4)).astype(np.float32), requires_grad=True)
        shift = Tensor((0.1 * rng.normal(size=4)).astype(np.float32), requires_grad=True)
        for f in (
            lambda: ad.tsum(ad.mul(ad.add(x, y), x)),
            lambda: ad.tsum(ad.gelu(x)),
            lambda: ad.tsum(ad.mul(ad.softmax(x, axis=-1), y)),
            lambda: ad.tsum(ad.mul(ad.l2_normalize(x), y)),
            lambda: ad.tsum(ad.mul(ad.layer_norm(x, scale, shift), x)),
        ):
            worst = max(worst, grad_check(f, [x, y, scale, shift]))
    return worst < 1e-3, f"max relative error {worst:.2e}"


def check_grad_matmul():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        a = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)).astype(np.float32), requires_grad=True)
        worst = max(worst, grad_check(lambda: ad.tsum(ad.mul(ad.matmul(a, b), 0.5)), [a, b]))
    return worst < 1e-3, f"max relative error {worst:.2e}"


def check_grad_gather_scatter():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 5, 3)).astype(np.float32), requires_grad=True)
    idx = np.stack([rng.permutation(5)[:2] for _ in range(2)])
    w = Tensor(rng.normal(size=(2, 2, 3)).astype(np.float32), requires_grad=True)
    e1 = grad_check(lambda: ad.tsum(ad.mul(ad.gather_tokens(x, idx), w)), [x, w])
    e2 = grad_check(lambda: ad.tsum(ad.mul(ad.scatter_tokens(w, idx, 5), x)), [w, x])
    worst = max(e1, e2)
    return worst < 1e-3, f"max relative error {worst:.2e}"


def check_grad_infonce():
    rng = np.random.default_rng(3)
    v = Tensor(rng.normal(size=(4, 8)).astype(np.float32), requires_grad=True)
    l = Tensor(rng.normal(size=(4, 8)).astype(np.float32), requires_grad=True)
    lt = Tensor(np.log(0.5), requires_grad=True)

    def f():
        return infonce_i2t(ContrastiveBatch(v=ad.l2_normalize(v), l=ad.l2_normalize(l), tau=ad.texp(lt)))

    err = grad_check(f, [v, l, lt])
    return err < 1e-3, f"relative error {err:.2e}"


def check_grad_full_loss():
    rng = np.random.default_rng(4)
    model = _toy_model()
    images, ids = _toy_batch(rng)
    f = make_fd_loss(model, images, ids, mode="full", lambda_rec=2.0, seed=11)
    wrt = [model.image_enc.params["patch_proj/w"], model.decoder.params["mask_token"], model.log_temp]
    err = grad_check(f, wrt)
    return err < 1e-3, f"relative error {err:.2e}"


def check_infonce_uniform_identity():
    worst = 0.0
    for b in (2, 4, 8):
        v = np.tile(np.array([[1.0, 0.0]], dtype=np.float32), (b, 1))
        l = np.tile(np.array([[0.0, 1.0]], dtype=np.float32), (b, 1))
        loss = infonce_i2t(ContrastiveBatch(v=Tensor(v), l=Tensor(l), tau=Tensor(1.0)))
        worst = max(worst, abs(loss.item() - np.log(b)))
    return worst < 1e-6, f"max |loss - ln B| = {worst:.2e}"


def check_recon_identities():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(2, 3, 8)).astype(np.float32)
    vals = [
        recon_loss(ReconBatch(Tensor(f), Tensor(f.copy()))).item(),
        recon_loss(ReconBatch(Tensor(f), Tensor(-f))).item() - 2.0,
    ]
    ortho = np.zeros_like(f)
    ortho[..., 0] = 1.0
    other = np.zeros_like(f)
    other[..., 1] = 1.0
    vals.append(recon_loss(ReconBatch(Tensor(ortho), Tensor(other))).item() - 1.0)
    worst = max(abs(v) for v in vals)
    return worst < 1e-6, f"max identity deviation {worst:.2e}"


def check_ensemble_collapses():
    rng = np.random.default_rng(6)
    p = np.abs(rng.normal(size=6)) + 1e-3
    z = np.abs(rng.normal(size=6)) + 1e-3
    ok_alpha = ensemble_score(p, z, np.ones(6, bool), 1.0, 0.5).tobytes() == p.tobytes()
    ok_equal = ensemble_score(p, p.copy(), np.zeros(6, bool), 0.2, 0.65).tobytes() == p.tobytes()
    return ok_alpha and ok_equal, f"alpha=1 exact: {ok_alpha}, z=p exact: {ok_equal}"


def check_mask_disjointness():
    rng = np.random.default_rng(7)
    for _ in range(200):
        plan = sample_mask(16, 0.75, rng)
        union = np.union1d(plan.visible, plan.masked)
        if len(union) != 16 or len(np.intersect1d(plan.visible, plan.masked)) != 0:
            return False, "plan failed to partition the tokens"
        if len(plan.masked) != 12:
            return False, f"|M| = {len(plan.masked)}, expected 12"
    return True, "200 plans partition correctly"


def check_flop_parity():
    rng = np.random.default_rng(8)
    model = _toy_model()
    images, ids = _toy_batch(rng, b=3)
    _, base = pretrain_step_loss(model, images, ids, lambda_rec=0.0, train=False)
    _, excl = pretrain_step_loss(
        model, images, ids, mode="exclusive", lambda_rec=2.0, train=False, rng=np.random.default_rng(0)
    )
    ad.reset_graph()
    total = excl["tokens_contrastive"] + excl["tokens_recon"]
    ok = total == base["tokens_contrastive"]
    return ok, f"exclusive {total} vs baseline {base['tokens_contrastive']} token forwards"


def check_pe_interpolation():
    table = sinusoidal_pe_2d(4, 4, 16)
    identity = interpolate_pe(table, (4, 4), (4, 4))
    if identity.tobytes() != table.tobytes():
        return False, "grid-to-same-grid interpolation is not the identity"
    rng = np.random.default_rng(9)
    small = rng.normal(size=(4, 8)).astype(np.float32)
    center = interpolate_pe(small, (2, 2), (3, 3)).reshape(3, 3, 8)[1, 1]
    err = float(np.abs(center - small.mean(axis=0)).max())
    return err < 1e-6, f"identity bitwise, center-of-corners error {err:.2e}"


def check_ped_semantics():
    rng = np.random.default_rng(10)
    tokens = Tensor(rng.normal(size=(4, 4, 8)).astype(np.float32))
    pe = rng.normal(size=(4, 8)).astype(np.float32)
    out_eval, keep_eval = apply_ped(tokens, pe, 0.9, "eval", None)
    if not keep_eval.all() or not np.array_equal(out_eval.data, tokens.data + pe[None]):
        return False, "eval mode must always add PE"
    out_one, keep_one = apply_ped(tokens, pe, 1.0, "train", rng)
    if keep_one.any() or out_one.data.tobytes() != tokens.data.tobytes():
        return False, "ped_prob=1 must be bitwise identical to the no-PE path"
    drop_rng = np.random.default_rng(11)
    drops = sum(int(~apply_ped(tokens, pe, 0.5, "train", drop_rng)[1][0]) for _ in range(2000))
    freq = drops / 2000
    return 0.45 <= freq <= 0.55, f"drop frequency {freq:.3f}"


def check_checkpoint_roundtrip():
    rng = np.random.default_rng(12)
    params = {"a/w": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=7).astype(np.float32)}
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.ckpt")
        save_checkpoint(params, path)
        back = load_checkpoint(path)
        ok = all(back[k].tobytes() == v.tobytes() for k, v in params.items())
        save_checkpoint(back, path + "2")
        ok = ok and open(path, "rb").read() == open(path + "2", "rb").read()
    return ok, "bitwise round trip"


def check_dataset_roundtrip():
    records = generate_pretrain_dataset(5, seed=0)
    with tempfile.TemporaryDirectory() as tmp:
        p1 = os.path.join(tmp, "a.cfmd")
        p2 = os.path.join(tmp, "b.cfmd")
        write_dataset(records, p1)
        write_dataset(read_dataset(p1), p2)
        ok = open(p1, "rb").read() == open(p2, "rb").read()
    return ok, "byte-exact round trip"


def check_stop_gradient_contract():
    rng = np.random.default_rng(13)
    target = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32), requires_grad=True)
    recon_loss(ReconBatch(target, ad.mul(w, 1.5)), sg_side="target").backward()
    ok1 = target.grad is None and w.grad is not None
    target.grad = None
    w.grad = None
    recon_loss(ReconBatch(target, ad.mul(w, 1.5)), sg_side="reconstruction").backward()
    ok2 = w.grad is None and target.grad is not None
    return ok1 and ok2, "both sg sides block exactly"


CHECKS = [
    ("grad_elementwise", check_grad_elementwise),
    ("grad_matmul", check_grad_matmul),
    ("grad_gather_scatter", check_grad_gather_scatter),
    ("grad_infonce", check_grad_infonce),
    ("grad_full_loss", check_grad_full_loss),
    ("infonce_uniform_identity", check_infonce_uniform_identity),
    ("recon_identities", check_recon_identities),
    ("ensemble_collapses", check_ensemble_collapses),
    ("mask_disjointness", check_mask_disjointness),
    ("flop_parity", check_flop_parity),
    ("pe_interpolation", check_pe_interpolation),
    ("ped_semantics", check_ped_semantics),
    ("checkpoint_roundtrip", check_checkpoint_roundtrip),
    ("dataset_roundtrip", check_dataset_roundtrip),
    ("stop_gradient_contract", check_stop_gradient_contract),
]


def run_all():
    """Run every check on a fresh graph; returns (name, ok, detail) rows."""
    results = []
    for name, fn in CHECKS:
        ad.reset_graph()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    ad.reset_graph()
    return results
