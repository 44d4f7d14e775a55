from .codec import (
    EVT1ParseError,
    decode_evt1,
    encode_evt1,
    load_dataset,
    read_evt1,
    read_manifest,
    write_evt1,
    write_frequency_csv,
    write_manifest,
)
from .stream import (
    DualSample,
    Event,
    EventStream,
    EventTensor,
    FrameImage,
    FrameTensor,
    Scenario,
    accumulate_window,
    align_frames,
    centered_segment,
    confuse_timing,
    eliminate_time,
    event_frequency,
    extract_segment,
    rasterize,
)
from .synth import SynthConfig, synth_dual, synth_splits
