from evbias.sim.pixel import (
    Behavior,
    Calibration,
    ClosedLoop,
    SimConfig,
    SimResult,
    Simulator,
    bias_to_behavior,
    inject_bias_change_burst,
    simulate,
)
from evbias.sim.scene import (
    Brightness,
    Grating,
    MovingBar,
    MovingEdge,
    Route,
    Scene,
    TexturePan,
    Uniform,
)
