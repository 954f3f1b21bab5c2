"""A small skeleton transformer with a channel-wise feature gate.

Every (frame, joint) pair is a token: its coordinates go through a linear
joint embedding of width ``d_joint``, are projected to ``d_model`` and get a
learned positional embedding for their token slot. Pre-norm encoder blocks
(multi-head self-attention, GELU MLP) follow and the mean of the residual
stream over tokens is the feature vector ``z``. There is no final layer norm,
so feature norms are free to grow for inputs unlike the training data. When a
gate is attached the head sees ``sigmoid(alpha) * z``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import AdamState, Graph, SeededRng, adam_step, backward
from .numerics import autodiff as ad
from .skeldata import DatasetBundle, stratified_split

MODES = ("train", "eval", "mc_dropout")
TRAINABLE = ("all", "gate", "gate+backbone")
GATE = "gate.alpha"


@dataclass
class ModelConfig:
    n_classes: int = 8
    frames: int = 8
    joints: int = 25
    d_joint: int = 16
    d_model: int = 32
    layers: int = 2
    heads: int = 2
    mlp_ratio: int = 2
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layers < 1:
            raise ValueError("need at least one encoder layer")

    @property
    def tokens(self) -> int:
        return self.frames * self.joints


FULL_SCALE = dict(d_joint=32, d_model=256, layers=4, heads=4)


@dataclass
class TrainHyper:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-4
    seed: int = 0
    trainable: str = "all"
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.trainable not in TRAINABLE:
            raise ValueError(f"trainable must be one of {TRAINABLE}")


@dataclass
class ModelState:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    @property
    def has_gate(self) -> bool:
        return GATE in self.params

    def copy(self) -> "ModelState":
        return ModelState(ModelConfig(**asdict(self.config)), {k: v.copy() for k, v in self.params.items()})

    def n_params(self, names=None) -> int:
        names = self.params if names is None else names
        return int(sum(self.params[k].size for k in names))


def init_state(config: ModelConfig, rng: SeededRng | None = None) -> ModelState:
    gen = (rng or SeededRng(config.seed).child("init")).generator
    d, dj, hid = config.d_model, config.d_joint, config.mlp_ratio * config.d_model

    def dense(fan_in, fan_out):
        return gen.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

    p = {
        "embed.w": dense(3, dj), "embed.b": np.zeros(dj),
        "proj.w": dense(dj, d), "proj.b": np.zeros(d),
        "pos": gen.normal(0.0, 0.02, size=(config.tokens, d)),
    }
    for i in range(config.layers):
        pre = f"layer{i}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = np.ones(d), np.zeros(d)
        for name in ("q", "k", "v", "o"):
            p[pre + f"attn.{name}.w"], p[pre + f"attn.{name}.b"] = dense(d, d), np.zeros(d)
        # a key bias only shifts each query's scores by a constant, which softmax ignores
        del p[pre + "attn.k.b"]
        p[pre + "ln2.g"], p[pre + "ln2.b"] = np.ones(d), np.zeros(d)
        p[pre + "fc1.w"], p[pre + "fc1.b"] = dense(d, hid), np.zeros(hid)
        p[pre + "fc2.w"], p[pre + "fc2.b"] = dense(hid, d), np.zeros(d)
    p["head.w"], p["head.b"] = dense(d, config.n_classes), np.zeros(config.n_classes)
    return ModelState(config, p)


def attach_gate(state: ModelState) -> ModelState:
    """Add a zero-initialised gate and double the head weights.

    sigmoid(0) = 0.5, so the doubled head reproduces the ungated logits
    exactly at attachment time.
    """
    if state.has_gate:
        return state.copy()
    new = state.copy()
    new.params[GATE] = np.zeros(state.config.d_model)
    new.params["head.w"] = 2.0 * new.params["head.w"]
    return new


def apply_gate(z, alpha):
    """sigmoid(alpha) * z for arrays or graph nodes."""
    if isinstance(z, ad.Node):
        return ad.mul(z, ad.sigmoid(alpha))
    return np.asarray(z) * ad._sigmoid(np.asarray(alpha, dtype=np.float64))


def _linear(x, p, name):
    y = ad.matmul(x, p[name + ".w"])
    return ad.add(y, p[name + ".b"]) if name + ".b" in p else y


def build_forward(g: Graph, p: dict, x: np.ndarray, config: ModelConfig, mode: str = "eval",
                  rng: np.random.Generator | None = None):
    """Record the forward pass on ``g``; returns (z, logits) nodes."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    x = np.asarray(x, dtype=np.float64)
    B = x.shape[0]
    if x.shape[1:] != (config.frames, config.joints, 3):
        raise ValueError(f"expected batch of {(config.frames, config.joints, 3)}, got {x.shape[1:]}")
    N, d, H = config.tokens, config.d_model, config.heads
    dh = d // H
    active = mode != "eval"
    drop = config.dropout

    tok = g.const(x.reshape(B, N, 3))
    h = _linear(_linear(tok, p, "embed"), p, "proj")
    h = ad.add(h, ad.embedding(p["pos"], np.arange(N)))
    for i in range(config.layers):
        pre = f"layer{i}."
        a = ad.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(name):
            return ad.transpose(ad.reshape(_linear(a, p, pre + name), (B, N, H, dh)), (0, 2, 1, 3))

        q, k, v = heads("attn.q"), heads("attn.k"), heads("attn.v")
        att = ad.softmax(ad.matmul(ad.mul(q, 1.0 / np.sqrt(dh)), ad.transpose(k, (0, 1, 3, 2))))
        ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (B, N, d))
        h = ad.add(h, ad.dropout(_linear(ctx, p, pre + "attn.o"), drop, rng, active))
        m = ad.layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        m = _linear(ad.gelu(_linear(m, p, pre + "fc1")), p, pre + "fc2")
        h = ad.add(h, ad.dropout(m, drop, rng, active))
    z = ad.mean(h, axis=1)
    zt = apply_gate(z, p[GATE]) if GATE in p else z
    return z, _linear(zt, p, "head")


def cross_entropy(logits, labels: np.ndarray):
    onehot = np.eye(logits.shape[1])[labels]
    picked = ad.sum(ad.mul(logits, onehot), axis=1)
    return ad.mean(ad.sub(ad.log_sum_exp(logits, axis=1), picked))


def forward(state: ModelState, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None,
            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Features and logits for a stack of sequences ``x`` of shape (n, T, J, 3)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected (n, T, J, 3) input, got {x.shape}")
    zs, ls = [], []
    for s in range(0, len(x), batch_size):
        g = Graph()
        p = {k: g.param(k, v, trainable=False) for k, v in state.params.items()}
        z, logits = build_forward(g, p, x[s:s + batch_size], state.config, mode, rng)
        zs.append(z.value)
        ls.append(logits.value)
    if not zs:
        return np.zeros((0, state.config.d_model)), np.zeros((0, state.config.n_classes))
    return np.concatenate(zs), np.concatenate(ls)


def accuracy(state: ModelState, bundle: DatasetBundle) -> float:
    if len(bundle) == 0:
        return float("nan")
    _, logits = forward(state, bundle.coords)
    return float(np.mean(logits.argmax(axis=1) == bundle.labels))


def trainable_names(state: ModelState, mode: str) -> list[str]:
    if mode == "gate":
        return [GATE]
    return list(state.params)


def _fit(state: ModelState, train: DatasetBundle, val: DatasetBundle, hyper: TrainHyper, rng: SeededRng):
    names = trainable_names(state, hyper.trainable)
    opt = AdamState(lr=hyper.lr, weight_decay=hyper.weight_decay)
    shuffle, drop = rng.child("shuffle").generator, rng.child("dropout").generator
    best, best_acc, log = state.copy(), -1.0, []
    params = dict(state.params)
    n = len(train)
    for epoch in range(hyper.epochs):
        order = shuffle.permutation(n)
        losses, hits = [], 0
        for s in range(0, n, hyper.batch_size):
            idx = order[s:s + hyper.batch_size]
            g = Graph()
            nodes = {k: g.param(k, v, trainable=k in names) for k, v in params.items()}
            _, logits = build_forward(g, nodes, train.coords[idx], state.config, "train", drop)
            loss = cross_entropy(logits, train.labels[idx])
            grads = backward(g, loss)
            params, opt = adam_step(params, grads, opt)
            losses.append(float(loss.value) * len(idx))
            hits += int(np.sum(logits.value.argmax(axis=1) == train.labels[idx]))
        current = ModelState(state.config, params)
        val_acc = accuracy(current, val)
        log.append({"epoch": epoch + 1, "train_loss": sum(losses) / n, "train_acc": hits / n, "val_acc": val_acc})
        if val_acc >= best_acc:
            best, best_acc = current.copy(), val_acc
    return best, log


def train(config: ModelConfig, bundle: DatasetBundle, hyper: TrainHyper,
          val_bundle: DatasetBundle | None = None) -> tuple[ModelState, list[dict]]:
    """Train from scratch with Adam on cross-entropy; keeps the best-validation weights.

    Without ``val_bundle`` a stratified ``hyper.val_fraction`` of ``bundle`` is
    held out for validation.
    """
    if len(bundle) == 0:
        raise ValueError("empty training set")
    if bundle.n_classes != config.n_classes:
        raise ValueError(f"bundle has {bundle.n_classes} classes, config expects {config.n_classes}")
    rng = SeededRng(hyper.seed)
    if val_bundle is None:
        rest, held = stratified_split(bundle.labels, hyper.val_fraction, rng.child("val-split"))
        bundle, val_bundle = bundle.subset(rest), bundle.subset(held, "val")
    state = init_state(config, rng.child("init"))
    return _fit(state, bundle, val_bundle, hyper, rng)


def finetune_gating(state: ModelState, bundle: DatasetBundle, hyper: TrainHyper,
                    val_bundle: DatasetBundle | None = None) -> tuple[ModelState, list[dict], dict]:
    """Attach (if needed) and train the feature gate on a target domain.

    ``hyper.trainable`` is ``"gate"`` for frozen gating (backbone and head
    fixed) or ``"gate+backbone"`` for end-to-end finetuning. Returns the
    adapted state, the epoch log and a parameter-count report.
    """
    if hyper.trainable not in ("gate", "gate+backbone"):
        raise ValueError("finetune_gating needs trainable 'gate' or 'gate+backbone'")
    if len(bundle) == 0:
        raise ValueError("empty training set")
    rng = SeededRng(hyper.seed)
    if val_bundle is None:
        rest, held = stratified_split(bundle.labels, hyper.val_fraction, rng.child("val-split"))
        bundle, val_bundle = bundle.subset(rest), bundle.subset(held, "val")
    gated = attach_gate(state)
    adapted, log = _fit(gated, bundle, val_bundle, hyper, rng)
    return adapted, log, parameter_report(adapted)


def parameter_report(state: ModelState) -> dict:
    backbone = [k for k in state.params if k != GATE]
    gate = state.params[GATE].size if state.has_gate else state.config.d_model
    total = state.n_params(backbone)
    return {"gate_params": int(gate), "backbone_params": total, "gate_overhead": gate / total}


def ensemble_train(config: ModelConfig, bundle: DatasetBundle, hyper: TrainHyper, k: int,
                   val_bundle: DatasetBundle | None = None, first: ModelState | None = None):
    """``k`` trainings that differ only in seed; member ``i`` uses substream ``member-i``.

    Member 0 keeps ``hyper.seed`` itself so a single-model run doubles as the
    first member; pass it as ``first`` to skip retraining it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    members, logs = [], []
    for i in range(k):
        if i == 0 and first is not None:
            members.append(first)
            logs.append([])
            continue
        seed = hyper.seed if i == 0 else SeededRng(hyper.seed).child(f"member-{i}").seed
        member_hyper = TrainHyper(**{**asdict(hyper), "seed": seed})
        member_config = ModelConfig(**{**asdict(config), "seed": seed})
        state, log = train(member_config, bundle, member_hyper, val_bundle)
        members.append(state)
        logs.append(log)
    return members, logs


# --- checkpoints ------------------------------------------------------------------------------

def save_checkpoint(state: ModelState, path) -> Path:
    """``model.json`` (config + parameter index) and ``weights.bin`` (float64 LE)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, offset, blobs = [], 0, []
    for name in sorted(state.params):
        arr = np.ascontiguousarray(state.params[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    (path / "weights.bin").write_bytes(b"".join(blobs))
    meta = {"config": asdict(state.config), "params": index}
    (path / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    meta = json.loads((path / "model.json").read_text())
    raw = (path / "weights.bin").read_bytes()
    params = {}
    for entry in meta["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return ModelState(ModelConfig(**meta["config"]), params)
