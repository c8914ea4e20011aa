use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The seven controls recorded per tick: two mouse axes and five buttons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MouseX,
    MouseY,
    Attack,
    MoveForward,
    MoveBackward,
    MoveLeft,
    MoveRight,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::MouseX,
        Action::MouseY,
        Action::Attack,
        Action::MoveForward,
        Action::MoveBackward,
        Action::MoveLeft,
        Action::MoveRight,
    ];

    pub const BUTTONS: [Action; 5] = [
        Action::Attack,
        Action::MoveForward,
        Action::MoveBackward,
        Action::MoveLeft,
        Action::MoveRight,
    ];

    pub fn is_mouse(self) -> bool {
        matches!(self, Action::MouseX | Action::MouseY)
    }

    pub fn is_binary(self) -> bool {
        !self.is_mouse()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MouseX => "mouse_x",
            Action::MouseY => "mouse_y",
            Action::Attack => "attack",
            Action::MoveForward => "move_forward",
            Action::MoveBackward => "move_backward",
            Action::MoveLeft => "move_left",
            Action::MoveRight => "move_right",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionKeyError {
    #[error("unknown action `{0}`")]
    Unknown(String),
    #[error("missing action `{0}`")]
    Missing(Action),
}

impl FromStr for Action {
    type Err = ActionKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ActionKeyError::Unknown(s.to_string()))
    }
}

/// One real value per action: predictions, (averaged) targets, weights,
/// losses or gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionValues {
    pub mouse_x: f64,
    pub mouse_y: f64,
    pub attack: f64,
    pub move_forward: f64,
    pub move_backward: f64,
    pub move_left: f64,
    pub move_right: f64,
}

impl ActionValues {
    pub fn splat(v: f64) -> Self {
        Self::from_fn(|_| v)
    }

    pub fn from_fn(mut f: impl FnMut(Action) -> f64) -> Self {
        Self {
            mouse_x: f(Action::MouseX),
            mouse_y: f(Action::MouseY),
            attack: f(Action::Attack),
            move_forward: f(Action::MoveForward),
            move_backward: f(Action::MoveBackward),
            move_left: f(Action::MoveLeft),
            move_right: f(Action::MoveRight),
        }
    }

    pub fn get(&self, action: Action) -> f64 {
        match action {
            Action::MouseX => self.mouse_x,
            Action::MouseY => self.mouse_y,
            Action::Attack => self.attack,
            Action::MoveForward => self.move_forward,
            Action::MoveBackward => self.move_backward,
            Action::MoveLeft => self.move_left,
            Action::MoveRight => self.move_right,
        }
    }

    pub fn get_mut(&mut self, action: Action) -> &mut f64 {
        match action {
            Action::MouseX => &mut self.mouse_x,
            Action::MouseY => &mut self.mouse_y,
            Action::Attack => &mut self.attack,
            Action::MoveForward => &mut self.move_forward,
            Action::MoveBackward => &mut self.move_backward,
            Action::MoveLeft => &mut self.move_left,
            Action::MoveRight => &mut self.move_right,
        }
    }

    pub fn set(&mut self, action: Action, value: f64) {
        *self.get_mut(action) = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Action, f64)> + '_ {
        Action::ALL.into_iter().map(move |a| (a, self.get(a)))
    }

    pub fn sum(&self) -> f64 {
        self.iter().map(|(_, v)| v).sum()
    }

    /// Builds values from a name-keyed map; every action must be present.
    pub fn from_map(map: &HashMap<String, f64>) -> Result<Self, ActionKeyError> {
        if let Some(unknown) = map.keys().find(|k| k.parse::<Action>().is_err()) {
            return Err(ActionKeyError::Unknown(unknown.clone()));
        }
        let mut out = Self::default();
        for action in Action::ALL {
            let v = map
                .get(action.name())
                .ok_or(ActionKeyError::Missing(action))?;
            out.set(action, *v);
        }
        Ok(out)
    }

    pub fn to_map(&self) -> HashMap<String, f64> {
        self.iter()
            .map(|(a, v)| (a.name().to_string(), v))
            .collect()
    }
}
