//! The Snake game on an n x n grid.
//!
//! Rules: the snake starts with body length two and grows by one each time it
//! eats the apple, which awards +1. Hitting a wall or the snake's own body
//! terminates the episode with -1. A reversing action (180 degrees) keeps the
//! current direction. Episodes also terminate with reward 0 after
//! `200 * n` consecutive steps without eating, so a non-learning policy
//! cannot loop forever.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::rng::Rng64;

pub const ACTION_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn from_action(a: usize) -> Result<Self> {
        match a {
            0 => Ok(Direction::Up),
            1 => Ok(Direction::Down),
            2 => Ok(Direction::Left),
            3 => Ok(Direction::Right),
            _ => Err(Error::Usage(format!("action index {a} out of range"))),
        }
    }

    fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

type Cell = (usize, usize);

#[derive(Debug, Clone)]
pub struct SnakeState {
    grid_size: usize,
    /// Head first.
    body: VecDeque<Cell>,
    apple: Cell,
    direction: Direction,
    score: i64,
    terminal: bool,
    apples_eaten: u32,
    steps_since_apple: u32,
    no_eat_cap: u32,
}

impl SnakeState {
    /// Fresh episode: a length-2 snake lies horizontally at the grid center
    /// heading right; the apple lands uniformly on a free cell.
    pub fn reset(grid_size: usize, rng: &mut Rng64) -> Result<Self> {
        Self::reset_with_cap(grid_size, 200 * grid_size as u32, rng)
    }

    pub fn reset_with_cap(grid_size: usize, no_eat_cap: u32, rng: &mut Rng64) -> Result<Self> {
        if grid_size < 4 {
            return Err(Error::Config(format!(
                "grid size {grid_size} too small, need at least 4"
            )));
        }
        let row = grid_size / 2;
        let head = (row, grid_size / 2);
        let tail = (row, grid_size / 2 - 1);
        let mut state = SnakeState {
            grid_size,
            body: VecDeque::from(vec![head, tail]),
            apple: (0, 0),
            direction: Direction::Right,
            score: 0,
            terminal: false,
            apples_eaten: 0,
            steps_since_apple: 0,
            no_eat_cap,
        };
        state.apple = state
            .spawn_apple(rng)
            .expect("a fresh board always has free cells");
        Ok(state)
    }

    fn spawn_apple(&self, rng: &mut Rng64) -> Option<Cell> {
        let mut free = Vec::with_capacity(self.grid_size * self.grid_size - self.body.len());
        for r in 0..self.grid_size {
            for c in 0..self.grid_size {
                if !self.body.contains(&(r, c)) {
                    free.push((r, c));
                }
            }
        }
        if free.is_empty() {
            None
        } else {
            Some(free[rng.range(free.len())])
        }
    }

    /// Advances one step. Returns the reward: +1 apple, -1 death, else 0.
    pub fn step(&mut self, action: usize, rng: &mut Rng64) -> Result<f64> {
        if self.terminal {
            return Err(Error::Usage("stepping a terminal snake state".into()));
        }
        let requested = Direction::from_action(action)?;
        if requested != self.direction.opposite() {
            self.direction = requested;
        }

        let head = *self.body.front().unwrap();
        let (dr, dc) = self.direction.delta();
        let nr = head.0 as i64 + dr;
        let nc = head.1 as i64 + dc;
        if nr < 0 || nc < 0 || nr >= self.grid_size as i64 || nc >= self.grid_size as i64 {
            // Wall: die in place, body unchanged.
            self.terminal = true;
            self.score -= 1;
            return Ok(-1.0);
        }
        let new_head = (nr as usize, nc as usize);
        let eating = new_head == self.apple;

        // On a non-growing move the tail vacates its cell in the same tick,
        // so moving onto the current tail is legal. The apple is never on the
        // body, so a growing move cannot collide.
        let blocked = if eating {
            false
        } else {
            self.body
                .iter()
                .take(self.body.len() - 1)
                .any(|&cell| cell == new_head)
        };
        if blocked {
            self.terminal = true;
            self.score -= 1;
            return Ok(-1.0);
        }

        self.body.push_front(new_head);
        if eating {
            self.apples_eaten += 1;
            self.score += 1;
            self.steps_since_apple = 0;
            match self.spawn_apple(rng) {
                Some(cell) => self.apple = cell,
                None => {
                    // Board completely filled: nothing left to eat.
                    self.terminal = true;
                }
            }
            Ok(1.0)
        } else {
            self.body.pop_back();
            self.steps_since_apple += 1;
            if self.steps_since_apple >= self.no_eat_cap {
                self.terminal = true;
            }
            Ok(0.0)
        }
    }

    /// Grayscale board image: empty 0.0, body 0.5, head 0.75, apple 1.0.
    pub fn render(&self) -> Tensor {
        let n = self.grid_size;
        let mut img = Tensor::zeros(vec![n, n]);
        for &(r, c) in self.body.iter().skip(1) {
            img.data_mut()[r * n + c] = 0.5;
        }
        let &(hr, hc) = self.body.front().unwrap();
        img.data_mut()[hr * n + hc] = 0.75;
        if !self.terminal || !self.body.contains(&self.apple) {
            img.data_mut()[self.apple.0 * n + self.apple.1] = 1.0;
        }
        img
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn terminal(&self) -> bool {
        self.terminal
    }

    pub fn score(&self) -> i64 {
        self.score
    }

    pub fn apples_eaten(&self) -> u32 {
        self.apples_eaten
    }

    pub fn body_len(&self) -> usize {
        self.body.len()
    }

    pub fn apple(&self) -> Cell {
        self.apple
    }

    pub fn head(&self) -> Cell {
        *self.body.front().unwrap()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }
}
