//! Simulated hardware: arm kinematics, robot and spine geometry, noisy
//! tracker and depth sensors, and needle placement.

mod kinematics;
mod observe;
mod robot;
mod scenario;
mod shapes;
mod spine;
mod trial;

pub use kinematics::*;
pub use observe::*;
pub use robot::{surface_samples, NeedleGuide, RobotModel, VirtualRobot};
pub use scenario::*;
pub use shapes::MeshBuilder;
pub use spine::*;
pub use trial::*;
