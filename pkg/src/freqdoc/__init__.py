"""Frequency-domain document understanding pipeline.

Images are letterboxed onto a fixed square canvas, converted to YCbCr with
4:2:0 subsampling, and block-transformed into a 192-channel DCT coefficient
cube at 1/8 resolution. A windowed-attention encoder turns the cube into a
compact visual token sequence for a language model; companion modules build
OCR instruction datasets and score model responses.
"""

from .encoder import (
    EncoderConfig,
    GradCheckReport,
    ParamSet,
    VisualTokens,
    concat_with_instruction,
    encoder_backward,
    encoder_forward,
    grad_check,
    init_params,
    load_params,
    project_tokens,
    save_params,
    token_count,
    truncated_normal,
)
from .errors import FormatError, ValidationError
from .evaluation import (
    DatasetScore,
    EvalReport,
    EvalSample,
    aggregate_report,
    contains_match,
    normalize_text,
    parse_sample,
    render_table,
    report_to_json,
    score_dataset,
)
from .frequency import (
    CHROMA_BASE,
    CUBE_CHANNELS,
    LUMA_BASE,
    ZIGZAG,
    AdapterWeights,
    FrequencyCube,
    QuantTables,
    adapter_project,
    build_quant_tables,
    dequantize_block,
    dequantize_cube,
    extract_frequency_cube,
    forward_dct_block,
    inverse_dct_block,
    plane_coefficients,
    plane_from_coefficients,
    quantize_block,
    read_tensor,
    reconstruct_canvas,
    rgb_flatten_cube,
    write_tensor,
)
from .imaging import (
    CanvasTransform,
    RgbImage,
    YcbcrPlanes,
    bilinear_resize,
    load_image,
    map_box,
    plan_canvas,
    psnr,
    resize_and_pad,
    rgb_to_ycbcr,
    subsample_chroma,
    ycbcr_to_rgb,
)
from .instructions import (
    Annotation,
    DatasetBuild,
    InstructionRecord,
    MixPlan,
    MixReport,
    QaPair,
    TemplateBank,
    TextRegion,
    build_dataset,
    eligible_tasks,
    format_box,
    mix_batches,
    parse_annotation,
    reading_order,
    render_instruction,
    render_response,
    sample_task,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterWeights",
    "Annotation",
    "CHROMA_BASE",
    "CUBE_CHANNELS",
    "CanvasTransform",
    "DatasetBuild",
    "DatasetScore",
    "EncoderConfig",
    "EvalReport",
    "EvalSample",
    "FormatError",
    "FrequencyCube",
    "GradCheckReport",
    "InstructionRecord",
    "LUMA_BASE",
    "MixPlan",
    "MixReport",
    "ParamSet",
    "QaPair",
    "QuantTables",
    "RgbImage",
    "TemplateBank",
    "TextRegion",
    "ValidationError",
    "VisualTokens",
    "YcbcrPlanes",
    "ZIGZAG",
    "adapter_project",
    "aggregate_report",
    "bilinear_resize",
    "build_dataset",
    "build_quant_tables",
    "concat_with_instruction",
    "contains_match",
    "dequantize_block",
    "dequantize_cube",
    "eligible_tasks",
    "encoder_backward",
    "encoder_forward",
    "extract_frequency_cube",
    "format_box",
    "forward_dct_block",
    "grad_check",
    "init_params",
    "inverse_dct_block",
    "load_image",
    "load_params",
    "map_box",
    "mix_batches",
    "normalize_text",
    "parse_annotation",
    "parse_sample",
    "plan_canvas",
    "plane_coefficients",
    "plane_from_coefficients",
    "project_tokens",
    "psnr",
    "quantize_block",
    "read_tensor",
    "reading_order",
    "reconstruct_canvas",
    "render_instruction",
    "render_response",
    "render_table",
    "report_to_json",
    "resize_and_pad",
    "rgb_flatten_cube",
    "rgb_to_ycbcr",
    "sample_task",
    "save_params",
    "score_dataset",
    "subsample_chroma",
    "token_count",
    "truncated_normal",
    "write_tensor",
    "ycbcr_to_rgb",
]
