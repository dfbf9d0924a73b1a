pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;

const THRUST: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarStep {
    pub position: f64,
    pub velocity: f64,
    pub reward: f64,
    pub is_terminal: bool,
}

/// Classic mountain-car dynamics. Actions are 0 (push left), 1 (coast) and
/// 2 (push right). Velocity is zeroed on hitting the left wall.
pub fn mountain_car_step(position: f64, velocity: f64, action: usize) -> CarStep {
    if position >= GOAL_POSITION {
        return CarStep {
            position,
            velocity,
            reward: -1.0,
            is_terminal: true,
        };
    }
    let push = action as f64 - 1.0;
    let mut v = (velocity + THRUST * push - GRAVITY * (3.0 * position).cos()).clamp(-MAX_SPEED, MAX_SPEED);
    let x = (position + v).clamp(MIN_POSITION, MAX_POSITION);
    if x <= MIN_POSITION && v < 0.0 {
        v = 0.0;
    }
    CarStep {
        position: x,
        velocity: v,
        reward: -1.0,
        is_terminal: x >= GOAL_POSITION,
    }
}
