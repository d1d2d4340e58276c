# File: integrations/image_io.py
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from schemas.errors import UnsupportedFormat
from schemas.scene_schema import Image


def write_png(path: Union[str, Path], image: Image) -> None:
    """8-bit RGB PNG, values rounded half to even."""
    data = np.rint(np.clip(image.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(data).save(str(path), format="PNG")


def read_png(path: Union[str, Path]) -> Image:
    """Load an image as linear RGB in [0, 1]; alpha is dropped."""
    try:
        with PILImage.open(str(path)) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise UnsupportedFormat(f"cannot read image: {e}", path=str(path))
    return Image(pixels=data / 255.0)
