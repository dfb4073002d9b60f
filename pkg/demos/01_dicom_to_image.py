"""From raw DICOM bytes to a clean 8-bit image.

Builds a synthetic file in memory, parses it back, applies the rescale +
window transform, checks the value/shape policies and resizes with
aspect-preserving zero padding.
"""

import numpy as np
from PIL import Image

from medclust.dicom_io import parse_file, write_dicom
from medclust.imaging import (
    PolicyThresholds,
    WindowingParams,
    export_instance,
    rescale,
    shape_policy,
    value_policy,
    window_to_8bit,
)

# a 96x64 16-bit "scan": smooth ramp + a bright disk, CT-style rescaling
yy, xx = np.mgrid[0:96, 0:64] / 96.0
disk = np.clip(1 - 6 * ((yy - 0.5) ** 2 + (xx - 0.3) ** 2) ** 0.5, 0, 1)
raw = (1024 + 1800 * (0.3 * xx + 0.7 * disk)).astype(np.uint16)

blob = write_dicom(
    {
        "SOPInstanceUID": "1.2.840.9999.1",
        "StudyInstanceUID": "1.2.840.9999",
        "Modality": "CT",
        "BodyPartExamined": "HEAD",
        "RescaleSlope": 1,
        "RescaleIntercept": -1024,
        "WindowCenter": [5000, 400],   # first candidate flattens the image
        "WindowWidth": [1, 1600],
    },
    pixel=raw,
)
print(f"wrote a {len(blob)} byte DICOM stream")

inst = parse_file(blob)
print(f"parsed: {inst.rows}x{inst.cols}, {inst.bits_allocated}-bit, "
      f"modality={inst.tag_text('Modality')}, "
      f"window candidates={inst.tag('WindowCenter').values}")

# the windowing math step by step
rescaled = rescale(inst.frame_array(0), r_s=1, r_i=-1024)
print(f"rescaled range: [{rescaled.min():.0f}, {rescaled.max():.0f}]")

img = window_to_8bit(rescaled, WindowingParams(w_c=400, w_w=1600))
ok_v, r_v = value_policy(img)
ok_s, r_s = shape_policy(*img.shape)
print(f"windowed to 8-bit; value policy r_V={r_v:.3f} ({'accept' if ok_v else 'reject'}), "
      f"shape policy r_S={r_s:.3f} ({'accept' if ok_s else 'reject'})")

# the full export picks the first usable window candidate automatically
exported = export_instance(inst, PolicyThresholds())
print(f"export chose W_c={exported.window.w_c}, W_w={exported.window.w_w}, "
      f"frame {exported.frame_index}; output {exported.pixels.shape}")

Image.fromarray(exported.pixels, mode="L").save("demo_export.png")
print("saved demo_export.png (note the zero padding preserving aspect ratio)")
