"""Encoder architecture descriptions and the named presets."""

from dataclasses import asdict, dataclass, field

from ..errors import ConfigError

ACTIVATIONS = ("prelu", "gdn", "none")

# MSE lambdas of the public hyperprior model zoo, quality 1..8
QUALITY_LAMBDAS = (0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483, 0.0932, 0.1800)


@dataclass
class Stage:
    name: str
    out_channels: int
    kernel: int
    stride: int
    activation: str = "gdn"


@dataclass
class EncoderSpec:
    variant: str
    stages: list
    latent_channels: int
    hyper_channels: int
    tap_names: list = field(default_factory=list)
    in_channels: int = 3

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(**s) for s in self.stages]
        self.validate()

    @property
    def downsampling(self):
        f = 1
        for s in self.stages:
            f *= s.stride
        return f

    @property
    def pad_multiple(self):
        # two stride-2 hyper stages on top of the main path
        return self.downsampling * 4

    @property
    def layer_names(self):
        return [s.name for s in self.stages]

    def resolve_tap(self, name):
        if name == "bottleneck":
            return self.stages[-1].name
        return name

    def validate(self):
        if self.latent_channels <= 0 or self.hyper_channels <= 0:
            raise ConfigError("latent and hyper channel counts must be positive")
        if not self.stages:
            raise ConfigError("encoder needs at least one stage")
        if self.stages[-1].out_channels != self.latent_channels:
            raise ConfigError("last stage must emit the latent channels")
        names = self.layer_names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate stage names")
        for s in self.stages:
            if s.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {s.activation!r}")
            if s.stride < 1 or s.kernel < 1:
                raise ConfigError(f"bad stage geometry in {s.name}")
        for t in self.tap_names:
            if self.resolve_tap(t) not in names:
                raise ConfigError(f"tap {t!r} is not a layer of this encoder")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def cpips_spec(width=1.0, latent_channels=None, hyper_channels=None):
    """VGG-like five-stage encoder: per stage a PReLU conv then a GDN conv.

    Stage 1 keeps full resolution; stages 2..5 open with a stride-2 conv,
    for a total downsampling of 16.
    """
    ramp = [64, 128, 256, 512, 512]
    chans = [max(4, int(round(c * width))) for c in ramp]
    m = max(8, int(round(320 * width))) if latent_channels is None else latent_channels
    n = max(8, int(round(192 * width))) if hyper_channels is None else hyper_channels
    stages = []
    for i, c in enumerate(chans, start=1):
        stride = 1 if i == 1 else 2
        stages.append(Stage(f"conv{i}_1", c, 3, stride, "prelu"))
        stages.append(Stage(f"conv{i}_2", c, 3, 1, "gdn"))
    stages.append(Stage("bottleneck", m, 1, 1, "none"))
    taps = [f"conv{i}_2" for i in range(1, 6)] + ["bottleneck"]
    return EncoderSpec("cpips", stages, m, n, taps)


def hyperprior_spec(width=1.0, latent_channels=None, hyper_channels=None, n_stages=4):
    """Four 5x5 stride-2 convs with GDN between; N=192, M=320 at full width."""
    n = max(8, int(round(192 * width))) if hyper_channels is None else hyper_channels
    m = max(8, int(round(320 * width))) if latent_channels is None else latent_channels
    stages = []
    for i in range(1, n_stages + 1):
        last = i == n_stages
        stages.append(Stage(f"conv{i}", m if last else n, 5, 2, "none" if last else "gdn"))
    taps = [s.name for s in stages]
    return EncoderSpec("hyperprior", stages, m, n, taps)


def toy_spec(n_stages=3, channels=32, latent_channels=48, hyper_channels=32):
    """Desk-scale hyperprior-style encoder used by the toy experiments."""
    spec = hyperprior_spec(latent_channels=latent_channels, hyper_channels=hyper_channels,
                           n_stages=n_stages)
    for s in spec.stages[:-1]:
        s.out_channels = channels
    spec.variant = "toy"
    spec.validate()
    return spec


PRESETS = {"cpips": cpips_spec, "hyperprior": hyperprior_spec, "toy": toy_spec}


def make_spec(variant, **kwargs):
    try:
        return PRESETS[variant](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown encoder variant {variant!r}") from None
