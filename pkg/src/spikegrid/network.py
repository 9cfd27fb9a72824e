"""Spiking ResNet and VGG networks unrolled over timesteps."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import tensor as tn
from .errors import ContractError, TopologyError
from .layers import BN_MODES, Bntt, OutputAccumulator, boosting_forward
from .neuron import LifParams, LifState, PlifParam, lif_step
from .residual import Mode, downsample_project, s2m_apply, s2s_apply, v2v_inject
from .tensor import Tensor

STEMS = {
    # name: (kernel, stride, padding, max-pool after the stem)
    "s32": (3, 1, 1, False),
    "s64": (3, 2, 1, False),
    "s128": (5, 2, 2, True),
}

VGG11 = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")


@dataclass
class NetworkSpec:
    """Declarative description of a spiking network.

    The defaults describe S-ResNet38 (``n=6``, 16 base filters) trained for
    50 timesteps. ``bn_shift``, ``project_norm`` and ``fc_bias`` default to
    the convention under which the reference parameter totals are exact:
    BNTT scale only, normalization on the 1x1 projection, no output bias.
    """

    arch: str = "sresnet"
    n: int = 6
    base_filters: int = 16
    mode: str = "S2S"
    w_prime: float = 1.0
    boosting: bool = False
    stem: str = "s32"
    T_train: int = 50
    lif: LifParams = field(default_factory=LifParams)
    bn: str = "bntt"
    bn_shift: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    project_norm: bool = True
    fc_bias: bool = False
    classes: int = 10
    in_channels: int = 3
    plif_shared: bool = False
    seed: int = 0

    def validate(self) -> "NetworkSpec":
        if self.arch not in ("sresnet", "svgg11"):
            raise ContractError(f"unknown architecture {self.arch!r}")
        if self.n < 1 or self.base_filters < 1 or self.classes < 2 or self.T_train < 1:
            raise ContractError("n, base_filters and T_train must be >= 1 and classes >= 2")
        Mode(self.mode)
        if self.stem not in STEMS:
            raise ContractError(f"unknown stem {self.stem!r}; choose from {sorted(STEMS)}")
        if self.bn not in BN_MODES:
            raise ContractError(f"unknown normalization {self.bn!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        lif = LifParams(**d.pop("lif", {}))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown network fields {sorted(unknown)}")
        return cls(lif=lif, **d).validate()

    def replace(self, **changes) -> "NetworkSpec":
        return dataclasses.replace(self, **changes)


def _bn_slots(spec: NetworkSpec) -> int:
    return {"bntt": spec.T_train, "time_averaged": 1, "none": 0}[spec.bn]


def count_parameters(spec: NetworkSpec) -> int:
    """Closed-form trainable parameter count (no network is built)."""
    spec.validate()
    bn_per_channel = _bn_slots(spec) * (2 if spec.bn_shift else 1)
    total = 0
    spiking = 0
    if spec.arch == "sresnet":
        k = STEMS[spec.stem][0]
        total += spec.in_channels * spec.base_filters * k * k + bn_per_channel * spec.base_filters
        spiking += 1
        cin = spec.base_filters
        for width in (spec.base_filters, 2 * spec.base_filters, 4 * spec.base_filters):
            for _ in range(spec.n):
                total += (cin * width + width * width) * 9 + 2 * bn_per_channel * width
                spiking += 2
                if cin != width:
                    total += cin * width + (bn_per_channel * width if spec.project_norm else 0)
                cin = width
        features = cin
    else:
        cin = spec.in_channels
        scale = spec.base_filters / 64
        for item in VGG11:
            if item == "M":
                continue
            width = max(1, int(round(item * scale)))
            total += cin * width * 9 + bn_per_channel * width
            spiking += 1
            cin = width
        features = cin
    outputs = spec.classes * (10 if spec.boosting else 1)
    total += features * outputs + (outputs if spec.fc_bias else 0)
    if spec.lif.leak_mode == "learned":
        total += 1 if spec.plif_shared else spiking
    return total


class _Unit:
    """One spiking convolutional layer: conv -> norm -> LIF."""

    def __init__(self, net: "Network", name: str, cin: int, cout: int, k: int, stride: int, padding: int):
        self.name = name
        self.stride, self.padding = stride, padding
        self.weight = net._param(f"{name}.weight", net._he(cout, cin, k))
        self.bn = net._norm(name, cout)
        self.plif = net._plif(name)

    def current(self, x: Tensor, t: int, training: bool) -> Tensor:
        c = tn.conv2d(x, self.weight, self.stride, self.padding)
        return self.bn(c, t, training)


class _Block:
    def __init__(self, net: "Network", name: str, cin: int, cout: int, stride: int):
        self.conv1 = _Unit(net, f"{name}.conv1", cin, cout, 3, stride, 1)
        self.conv2 = _Unit(net, f"{name}.conv2", cout, cout, 3, 1, 1)
        self.proj = None
        self.stride = stride
        if cin != cout or stride != 1:
            self.proj = net._param(f"{name}.proj.weight", net._he(cout, cin, 1))
            self.proj_bn = net._norm(f"{name}.proj", cout) if net.spec.project_norm else None

    def project(self, x: Tensor, t: int, training: bool) -> Tensor:
        if self.proj is None:
            return x
        y = downsample_project(x, self.proj, self.stride)
        return self.proj_bn(y, t, training) if self.proj_bn is not None else y


class Network:
    """A built network. Parameters are tensors; running statistics are arrays."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec.validate()
        self.training = False
        self._params: dict[str, Tensor] = {}
        self._norms: list[Bntt] = []
        self._rng = np.random.default_rng(spec.seed)
        self._shared_plif = PlifParam(spec.lif.leak, "plif.raw") if (
            spec.lif.leak_mode == "learned" and spec.plif_shared) else None
        if self._shared_plif is not None:
            self._params["plif.raw"] = self._shared_plif.raw
        self.units: list[_Unit] = []
        self.blocks: list[_Block] = []
        self.layout: list = []
        if spec.arch == "sresnet":
            self._build_resnet()
        else:
            self._build_vgg()
        outputs = spec.classes * (10 if spec.boosting else 1)
        bound = 1.0 / np.sqrt(self.features)
        self.fc_weight = self._param("fc.weight", self._rng.uniform(-bound, bound, (outputs, self.features)))
        self.fc_bias = self._param("fc.bias", self._rng.uniform(-bound, bound, outputs)) if spec.fc_bias else None

    # -- construction helpers

    def _param(self, name: str, value) -> Tensor:
        p = tn.parameter(value, name)
        self._params[name] = p
        return p

    def _he(self, cout: int, cin: int, k: int) -> np.ndarray:
        return self._rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))

    def _norm(self, name: str, channels: int) -> Bntt:
        s = self.spec
        bn = Bntt(channels, s.T_train, s.bn, s.bn_shift, s.bn_momentum, s.bn_eps, name=f"{name}.bn")
        self._norms.append(bn)
        for p in bn.parameters():
            self._params[p.name] = p
        return bn

    def _plif(self, name: str) -> Optional[PlifParam]:
        if self.spec.lif.leak_mode != "learned":
            return None
        if self._shared_plif is not None:
            return self._shared_plif
        p = PlifParam(self.spec.lif.leak, f"{name}.plif.raw")
        self._params[p.raw.name] = p.raw
        return p

    def _build_resnet(self):
        s = self.spec
        k, stride, pad, pool = STEMS[s.stem]
        self.stem = _Unit(self, "stem", s.in_channels, s.base_filters, k, stride, pad)
        self.stem_pool = pool
        self.units.append(self.stem)
        cin = s.base_filters
        for stage, width in enumerate((s.base_filters, 2 * s.base_filters, 4 * s.base_filters), start=1):
            for b in range(s.n):
                st = 2 if (stage > 1 and b == 0) else 1
                blk = _Block(self, f"stage{stage}.block{b}", cin, width, st)
                self.blocks.append(blk)
                self.units += [blk.conv1, blk.conv2]
                cin = width
        self.features = cin

    def _build_vgg(self):
        s = self.spec
        cin = s.in_channels
        scale = s.base_filters / 64
        for i, item in enumerate(VGG11):
            if item == "M":
                self.layout.append("M")
                continue
            width = max(1, int(round(item * scale)))
            unit = _Unit(self, f"features.{i}", cin, width, 3, 1, 1)
            self.units.append(unit)
            self.layout.append(unit)
            cin = width
        self.features = cin

    # -- introspection

    @property
    def layer_names(self) -> list[str]:
        return [f"conv{i + 1}" for i in range(len(self.units))]

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for bn in self._norms:
            out.update(bn.buffers())
        return out

    def unit_norms(self) -> list[Bntt]:
        """Normalization layer of each spiking layer, in layer order."""
        return [u.bn for u in self.units]

    def leak_values(self) -> dict[str, float]:
        if self.spec.lif.leak_mode != "learned":
            return {u.name: self.spec.lif.leak for u in self.units}
        return {u.name: u.plif.value for u in self.units}

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {name: p.data.copy() for name, p in self._params.items()}
        d.update({name: b.copy() for name, b in self.buffers().items()})
        return d

    def load_state_dict(self, state: dict, strict: bool = True, skip=()) -> None:
        """Copy arrays into this network; raises :class:`TopologyError` on mismatch."""
        own = {**{n: p.data for n, p in self._params.items()}, **self.buffers()}
        diffs = []
        for name, arr in own.items():
            if name in skip:
                continue
            if name not in state:
                diffs.append((name, arr.shape, None))
            elif np.shape(state[name]) != arr.shape:
                diffs.append((name, arr.shape, np.shape(state[name])))
        if strict:
            diffs += [(name, None, np.shape(v)) for name, v in state.items() if name not in own and name not in skip]
        if diffs:
            listing = ", ".join(f"{n} (expected {e}, found {f})" for n, e, f in diffs)
            raise TopologyError(f"state does not match network: {listing}", diffs)
        for name, p in self._params.items():
            if name not in skip:
                p.data = np.array(state[name], dtype=p.data.dtype)
        for name, buf in self.buffers().items():
            if name not in skip:
                buf[...] = state[name]

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # -- running

    def forward(self, x, T: Optional[int] = None, record_activity: bool = False, record_spikes: bool = False):
        return forward(self, x, T, record_activity, record_spikes)

    __call__ = forward


def build_sresnet(spec: Optional[NetworkSpec] = None, **overrides) -> Network:
    spec = (spec or NetworkSpec()).replace(arch="sresnet", **overrides)
    return Network(spec)


def build_svgg(variant: str = "VGG11", spec: Optional[NetworkSpec] = None, **overrides) -> Network:
    if variant.upper() != "VGG11":
        raise ContractError(f"unsupported VGG variant {variant!r}")
    defaults = {"base_filters": 64} if spec is None else {}
    spec = (spec or NetworkSpec()).replace(arch="svgg11", **{**defaults, **overrides})
    return Network(spec)


def _check_T(net: Network, T: int) -> None:
    if T < 1:
        raise ContractError("number of timesteps must be >= 1")
    if net.spec.bn == "bntt" and T > net.spec.T_train:
        raise ContractError(
            f"T={T} exceeds T_train={net.spec.T_train}: per-timestep normalization only exists for the "
            "trained steps, so inference may use at most the first T_train steps (early stopping)")


def forward(net: Network, x, T: Optional[int] = None, record_activity: bool = False, record_spikes: bool = False):
    """Run ``T`` timesteps and return ``(logits, activity)``.

    ``x`` is either a static frame batch ``[N, C, H, W]`` presented at
    every step, or a sequence ``[T, N, C, H, W]``. Logits are the output
    accumulator divided by ``T``. ``activity`` is ``None`` unless
    ``record_activity`` or ``record_spikes`` is set; the latter also keeps
    raw spike arrays and per-step output currents.
    """
    from .analyze import ActivityRecord

    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=tn.get_default_dtype())
    sequence = data.ndim == 5
    if T is None:
        T = data.shape[0] if sequence else net.spec.T_train
    _check_T(net, T)
    if sequence and T > data.shape[0]:
        raise ContractError(f"input sequence has {data.shape[0]} steps, {T} requested")

    params = net.spec.lif
    leaks = [u.plif.leak() if u.plif is not None else params.leak for u in net.units]
    states = [LifState() for _ in net.units]
    L = len(net.units)
    frac = np.zeros((L, T)) if record_activity else None
    vol = np.zeros((L, T)) if record_activity else None
    spikes = [[None] * T for _ in range(L)] if record_spikes else None
    outputs = [] if record_spikes else None

    def fire(i, t, drive):
        o, states[i] = lif_step(states[i], drive, params, leaks[i])
        return o

    def note(i, t, o):
        if frac is not None:
            frac[i, t] = float(np.mean(o.data > 0))
            vol[i, t] = float(np.mean(o.data))
        if spikes is not None:
            spikes[i][t] = o.data.copy()

    acc = OutputAccumulator()
    stem_conv = None
    frame = None if sequence else Tensor(data)
    for t in range(T):
        xt = Tensor(data[t]) if sequence else frame
        training = net.training
        if net.spec.arch == "sresnet":
            stem = net.stem
            if sequence or stem_conv is None:
                stem_conv = tn.conv2d(xt, stem.weight, stem.stride, stem.padding)
            cur = stem.bn(stem_conv, t, training)
            o = fire(0, t, cur)
            carrier = cur
            if net.stem_pool:
                o = tn.pool2d(o, "max", 2, 2)
                carrier = tn.pool2d(carrier, "max", 2, 2)
            note(0, t, o)
            a = o
            li = 1
            mode = Mode(net.spec.mode)
            for blk in net.blocks:
                o1 = fire(li, t, blk.conv1.current(a, t, training))
                note(li, t, o1)
                c2 = blk.conv2.current(o1, t, training)
                if mode is Mode.S2M:
                    o2 = fire(li + 1, t, s2m_apply(c2, blk.project(a, t, training), net.spec.w_prime))
                elif mode is Mode.S2S:
                    o2 = s2s_apply(fire(li + 1, t, c2), blk.project(a, t, training))
                else:
                    carrier = v2v_inject(c2, blk.project(carrier, t, training))
                    o2 = fire(li + 1, t, carrier)
                note(li + 1, t, o2)
                a = o2
                li += 2
            feats = tn.global_avg_pool(a)
        else:
            a = xt
            li = 0
            for item in net.layout:
                if item == "M":
                    a = tn.pool2d(a, "avg", 2, 2)
                    continue
                a = fire(li, t, item.current(a, t, training))
                note(li, t, a)
                li += 1
            feats = tn.global_avg_pool(a)
        z = tn.linear(feats, net.fc_weight, net.fc_bias)
        if net.spec.boosting:
            z = boosting_forward(z)
        if outputs is not None:
            outputs.append(z.data.copy())
        acc.step(z)
    logits = acc.readout()
    activity = None
    if record_activity or record_spikes:
        activity = ActivityRecord(net.layer_names, frac, vol, spikes=spikes, outputs=outputs)
    return logits, activity


def inference_early_stop(net: Network, x, T_inf: int) -> Tensor:
    """Logits from the first ``T_inf`` steps only, divided by ``T_inf``."""
    if T_inf < 1:
        raise ContractError("T_inf must be >= 1")
    logits, _ = forward(net, x, T_inf)
    return logits
