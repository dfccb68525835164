"""Multi-sensor sliding-window fusion with a polarization-camera front end.

Subpackages/modules:

* geom          - rotations, rigid transforms, navigation states
* polarimetry   - division-of-focal-plane image pipeline and corner detection
* preintegration- IMU preintegration between keyframes
* factors/graph - factor types and the sliding-window optimizer
* estimator     - end-to-end sensor-log fusion
* trajectory/sensors/scenario - deterministic simulator
* evaluation    - trajectory association, alignment, and error metrics
* cli           - simulate / fuse / polar / eval commands
"""

from .backend import active_backend

__all__ = ["active_backend"]
__version__ = "0.1.0"
