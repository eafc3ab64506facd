"""Decode, resize, crop, normalize: the primitives every stage shares.

Run: python demos/01_images_and_preprocessing.py
"""

import numpy as np

from mobilepipe import ImageBuffer, center_crop, decode_image, encode_ppm, normalize, resize_bilinear

# A 2x1 grayscale-ish ramp as raw PPM bytes
ppm = b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255])
img = decode_image(ppm, "ppm")
print(f"decoded {img.width}x{img.height}x{img.channels}, values {img.data.tolist()}")

# Bilinear resize uses half-pixel centers: upscaling the 2-wide ramp to 3
# lands the middle output pixel exactly between the two sources.
wide = resize_bilinear(img, 3, 1)
print("2 -> 3 ramp:", wide.pixels[0, :, 0].tolist(), "(middle is the blend 127.5)")

# The camera template's frame is 480x640 but classifies a 480x480 window:
# a centered crop discards two equal 80-row bands.
frame = ImageBuffer(np.tile(np.arange(640, dtype=np.float32)[:, None, None], (1, 480, 3)))
window = center_crop(frame, 480, 480)
print(f"frame crop keeps rows {window.pixels[0,0,0]:.0f}..{window.pixels[-1,0,0]:.0f} of 0..639")

# Model metadata describes preprocessing as (x - mean) / std; the default
# mean 0 / std 255 maps 8-bit pixels onto [0, 1].
tensor = normalize(img, 0.0, 255.0)
print("normalized:", tensor.reshape(-1).tolist())

# PPM round-trips bit-exactly, so debug dumps are faithful.
assert decode_image(encode_ppm(img), "ppm").data.tolist() == img.data.tolist()
print("PPM encode/decode round-trip: exact")
