from evbias.io.config import (
    CONTROLLER_KINDS,
    BaselineSettings,
    ConfigError,
    ExperimentConfig,
    default_config_text,
    format_config,
    parse_config,
    read_config,
    write_config,
)
from evbias.io.files import (
    EventFileError,
    EventWriter,
    read_events,
    read_events_csv,
    write_events,
    write_events_csv,
)
from evbias.io.poses import make_poses, pose_interpolator, read_poses, write_poses
from evbias.io.udp import (
    GapReport,
    MalformedPacket,
    Reorderer,
    UdpReceiver,
    decode_packet,
    encode_packet,
    packetize,
    parse_endpoint,
    udp_send,
)
