//! Seeded random streams.
//!
//! Every subsystem draws from its own ChaCha8 stream derived from one master
//! seed: the key is the master seed, the stream id selects an independent
//! keystream. Changing how many numbers one subsystem consumes never shifts
//! another subsystem's draws.
//!
//! | stream | id |
//! |---|---|
//! | environment transitions | 1 |
//! | environment observations | 2 |
//! | planner candidates | 3 |
//! | agent exploration | 4 |
//! | trajectory replay sampling | 5 |
//! | transition replay sampling | 6 |
//! | network initialisation | 7 |
//! | training `h0` draws | 8 |
//! | deployment `h0` draw | 9 |
//! | random-walk baseline | 10 |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    EnvTransition = 1,
    EnvObservation = 2,
    Planner = 3,
    Exploration = 4,
    TrajectoryReplay = 5,
    TransitionReplay = 6,
    NetInit = 7,
    TrainingH0 = 8,
    DeploymentH0 = 9,
    RandomWalk = 10,
}

pub fn stream(master_seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream as u64);
    rng
}
