"""Write torchvision reference outputs for the architecture cross-check.

For every registry backbone this stores a randomly initialised torchvision
model (with randomised batch-norm statistics) as `<name>.safetensors`, plus
`<name>.io.safetensors` holding an input batch and the eval-mode logits.

    python scripts/torch_fixtures.py target/torch-fixtures
    PHYTO_TORCH_FIXTURES=target/torch-fixtures cargo test -p phyto --test torchvision
"""

import sys
from pathlib import Path

import torch
import torchvision.models as tvm
from safetensors.torch import save_file

BUILDERS = {
    "resnet18": tvm.resnet18,
    "resnet50": tvm.resnet50,
    "resnet152": tvm.resnet152,
    "resnext50": tvm.resnext50_32x4d,
    "densenet121": tvm.densenet121,
    "efficientnet_b0": tvm.efficientnet_b0,
}


def main(out: Path, size: int = 64) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for i, (name, build) in enumerate(BUILDERS.items()):
        torch.manual_seed(i)
        model = build(weights=None)
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.uniform_(-0.5, 0.5)
                m.running_var.uniform_(0.5, 1.5)
                torch.nn.init.uniform_(m.weight, 0.5, 1.5)
                torch.nn.init.uniform_(m.bias, -0.2, 0.2)
        model.eval()
        x = torch.randn(2, 3, size, size)
        with torch.no_grad():
            logits = model(x)
        state = {k: v.contiguous() for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")}
        save_file(state, str(out / f"{name}.safetensors"))
        save_file({"input": x.contiguous(), "logits": logits.contiguous()}, str(out / f"{name}.io.safetensors"))
        print(f"{name}: {len(state)} tensors, logits {tuple(logits.shape)}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "target/torch-fixtures"))
