# ruff: noqa: F401
from .network import (
    DistillationObjective,
    Model,
    StepResult,
    build_model,
    cross_entropy_objective,
    local_train_step,
)
from .packing import FlatParams, flat_param_count, pack, unpack
from .spec import (
    ArchitectureSpec,
    LayerSpec,
    ParamSlot,
    dump_architecture,
    load_architecture,
    with_flags,
)
from .zoo import (
    BUILTIN_ARCHITECTURES,
    get_architecture,
    lenet_style,
    mlp,
    resnet,
    tiny_cnn,
    tiny_mlp,
    vgg8,
)
