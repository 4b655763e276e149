import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from refine3d.errors import DimensionError, FormatError
from refine3d.fsutil import PathLike, write_bytes_atomic


def encode_png(image: np.ndarray) -> bytes:
    """[3, H, W] floats in [0, 1] -> 8-bit RGB PNG bytes"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected a [3, H, W] image, got {list(image.shape)}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buffer, format="PNG")
    return buffer.getvalue()


def write_png(image: np.ndarray, path: PathLike) -> None:
    write_bytes_atomic(path, encode_png(image))


def decode_png(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            if img.format != "PNG":
                raise FormatError(f"{source}: not a PNG file ({img.format})")
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise FormatError(f"{source}: unreadable PNG: {e}")
    return (pixels / 255.0).transpose(2, 0, 1).copy()


def read_png(path: PathLike) -> np.ndarray:
    """8-bit RGB PNG -> [3, H, W] float32 in [0, 1]"""
    with open(path, "rb") as f:
        payload = f.read()
    return decode_png(payload, str(path))
