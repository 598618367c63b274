//! Deterministic grid world: boards of coloured shapes, language actions,
//! ground-truth transitions and unlabelled episode rollouts.
//!
//! A board holds at most one object per `(color, shape)` pair, so every
//! action names its subject unambiguously. Actions render to (and parse
//! from) a small closed template grammar:
//!
//! ```text
//! move the <color> <shape> <left|right|up|down>
//! paint the <color> <shape> <new color>
//! remove the <color> <shape>
//! add a <color> <shape> at row <r> column <c>
//! ```

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Largest board side the action grammar can address (`row 0` .. `row 15`).
pub const MAX_SIDE: usize = 16;

/// Pixels per cell side in rendered rasters.
pub const CELL_PX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.word() == word)
    }

    fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [230, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 230],
            Color::Yellow => [240, 220, 40],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    pub fn from_word(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == word)
    }

    /// Whether pixel `(y, x)` inside a cell is painted for this shape.
    fn covers(self, y: usize, x: usize) -> bool {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let c = CELL_PX as f64 / 2.0;
        match self {
            Shape::Square => (1..CELL_PX - 1).contains(&y) && (1..CELL_PX - 1).contains(&x),
            Shape::Circle => (fy - c).powi(2) + (fx - c).powi(2) <= (c - 1.0).powi(2),
            Shape::Triangle => {
                if !(1..CELL_PX - 1).contains(&y) {
                    return false;
                }
                let half = (fy - 1.0) / 2.0;
                (fx - c).abs() <= half
            }
        }
    }
}

/// A `(color, shape)` pair; the identity of an object on the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Object {
    pub color: Color,
    pub shape: Shape,
}

impl Object {
    pub fn new(color: Color, shape: Shape) -> Self {
        Self { color, shape }
    }

    /// All twelve objects in canonical order.
    pub fn all() -> impl Iterator<Item = Object> {
        Shape::ALL
            .into_iter()
            .flat_map(|shape| Color::ALL.into_iter().map(move |color| Object { color, shape }))
    }
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.word(), self.shape.word())
    }
}

/// Number of distinct cell states: empty plus the twelve objects.
pub const NUM_CELL_STATES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Empty,
    Object(Object),
}

impl Cell {
    /// Dense code in `0..NUM_CELL_STATES`; 0 is empty.
    pub fn code(self) -> u8 {
        match self {
            Cell::Empty => 0,
            Cell::Object(o) => (1 + o.shape.index() * 4 + o.color.index()) as u8,
        }
    }

    pub fn from_code(code: u8) -> Option<Cell> {
        match code {
            0 => Some(Cell::Empty),
            1..=12 => {
                let i = (code - 1) as usize;
                Some(Cell::Object(Object::new(Color::ALL[i % 4], Shape::ALL[i / 4])))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "BoardRecord", try_from = "BoardRecord")]
pub struct Board {
    height: usize,
    width: usize,
    cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
struct BoardRecord {
    height: usize,
    width: usize,
    cells: Vec<Vec<u8>>,
}

impl From<Board> for BoardRecord {
    fn from(b: Board) -> Self {
        let cells = b
            .cells
            .chunks(b.width)
            .map(|row| row.iter().map(|c| c.code()).collect())
            .collect();
        BoardRecord {
            height: b.height,
            width: b.width,
            cells,
        }
    }
}

impl TryFrom<BoardRecord> for Board {
    type Error = String;

    fn try_from(r: BoardRecord) -> std::result::Result<Self, Self::Error> {
        if r.cells.len() != r.height || r.cells.iter().any(|row| row.len() != r.width) {
            return Err(format!("cell array is not {}x{}", r.height, r.width));
        }
        let codes: Vec<u8> = r.cells.into_iter().flatten().collect();
        Board::from_codes_lenient(r.height, r.width, &codes).map_err(|e| e.to_string())
    }
}

impl Board {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![Cell::Empty; height * width],
        }
    }

    /// Builds a board from row-major cell codes, checking the one-object-per-pair rule.
    pub fn from_codes(height: usize, width: usize, codes: &[u8]) -> Result<Self> {
        let board = Self::from_codes_lenient(height, width, codes)?;
        if let Some(dup) = board.duplicate_object() {
            return Err(Error::DuplicateObject(dup.to_string()));
        }
        Ok(board)
    }

    /// Like [`Board::from_codes`] but accepts repeated objects. Model
    /// predictions decode through this path; environment boards never
    /// contain duplicates.
    pub fn from_codes_lenient(height: usize, width: usize, codes: &[u8]) -> Result<Self> {
        if codes.len() != height * width {
            return Err(Error::WrongLength {
                expected: height * width,
                got: codes.len(),
            });
        }
        let cells = codes
            .iter()
            .map(|&code| {
                Cell::from_code(code)
                    .ok_or_else(|| Error::DimensionMismatch(format!("invalid cell code {code}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Board { height, width, cells })
    }

    pub fn duplicate_object(&self) -> Option<Object> {
        let mut seen = [false; NUM_CELL_STATES];
        for cell in &self.cells {
            if let Cell::Object(o) = cell {
                let code = cell.code() as usize;
                if seen[code] {
                    return Some(*o);
                }
                seen[code] = true;
            }
        }
        None
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|c| *c == Cell::Empty)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn codes(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.code()).collect()
    }

    pub fn get(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    /// Sets a cell without checking uniqueness; callers keep the invariant.
    pub(crate) fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.width + col] = cell;
    }

    pub fn find(&self, object: Object) -> Option<(usize, usize)> {
        self.cells
            .iter()
            .position(|c| *c == Cell::Object(object))
            .map(|i| (i / self.width, i % self.width))
    }

    pub fn objects(&self) -> Vec<(Object, usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Cell::Object(o) => Some((*o, i / self.width, i % self.width)),
                Cell::Empty => None,
            })
            .collect()
    }

    /// Number of cells whose state differs between two equally sized boards.
    pub fn diff_count(&self, other: &Board) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn same_dims(&self, other: &Board) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl fmt::Display for Board {
    /// Two characters per cell: colour initial and shape initial, `..` when empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.width) {
            for cell in row {
                match cell {
                    Cell::Empty => f.write_str("..")?,
                    Cell::Object(o) => write!(
                        f,
                        "{}{}",
                        &o.color.word()[..1],
                        &o.shape.word()[..1]
                    )?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn from_word(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.word() == word)
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    Move { direction: Direction },
    Recolor { color: Color },
    Remove,
    Add { row: usize, col: usize },
}

/// Verb class of an action; the stratification key for dataset curation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Move,
    Recolor,
    Remove,
    Add,
    Unparseable,
}

impl ActionClass {
    /// Fixed round-robin order.
    pub const ALL: [ActionClass; 5] = [
        ActionClass::Move,
        ActionClass::Recolor,
        ActionClass::Remove,
        ActionClass::Add,
        ActionClass::Unparseable,
    ];

    pub fn of_text(text: &str) -> Self {
        Action::parse(text).map_or(ActionClass::Unparseable, |a| a.class())
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::Move => "move",
            ActionClass::Recolor => "recolor",
            ActionClass::Remove => "remove",
            ActionClass::Add => "add",
            ActionClass::Unparseable => "unparseable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    #[serde(flatten)]
    pub kind: ActionKind,
    pub subject: Object,
}

impl Action {
    pub fn new(kind: ActionKind, subject: Object) -> Self {
        Self { kind, subject }
    }

    pub fn class(&self) -> ActionClass {
        match self.kind {
            ActionKind::Move { .. } => ActionClass::Move,
            ActionKind::Recolor { .. } => ActionClass::Recolor,
            ActionKind::Remove => ActionClass::Remove,
            ActionKind::Add { .. } => ActionClass::Add,
        }
    }

    /// Renders the canonical surface text.
    pub fn text(&self) -> String {
        let s = self.subject;
        match self.kind {
            ActionKind::Move { direction } => format!("move the {s} {}", direction.word()),
            ActionKind::Recolor { color } => format!("paint the {s} {}", color.word()),
            ActionKind::Remove => format!("remove the {s}"),
            ActionKind::Add { row, col } => format!("add a {s} at row {row} column {col}"),
        }
    }

    pub fn parse(text: &str) -> Result<Action> {
        let err = || Error::ActionParse(text.to_string());
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() < 4 {
            return Err(err());
        }
        let subject = || -> Result<Object> {
            Ok(Object::new(
                Color::from_word(words[2]).ok_or_else(err)?,
                Shape::from_word(words[3]).ok_or_else(err)?,
            ))
        };
        let number = |w: &str| -> Result<usize> {
            // reject "01", "+1" and friends so parsing stays the exact inverse of rendering
            let n: usize = w.parse().map_err(|_| err())?;
            if n.to_string() != w || n >= MAX_SIDE {
                return Err(err());
            }
            Ok(n)
        };
        match (words[0], words[1], words.len()) {
            ("move", "the", 5) => {
                let direction = Direction::from_word(words[4]).ok_or_else(err)?;
                Ok(Action::new(ActionKind::Move { direction }, subject()?))
            }
            ("paint", "the", 5) => {
                let color = Color::from_word(words[4]).ok_or_else(err)?;
                Ok(Action::new(ActionKind::Recolor { color }, subject()?))
            }
            ("remove", "the", 4) => Ok(Action::new(ActionKind::Remove, subject()?)),
            ("add", "a", 9) if words[4] == "at" && words[5] == "row" && words[7] == "column" => {
                let row = number(words[6])?;
                let col = number(words[8])?;
                Ok(Action::new(ActionKind::Add { row, col }, subject()?))
            }
            _ => Err(err()),
        }
    }

    /// Every action the grammar can express on a `height x width` board.
    pub fn enumerate(height: usize, width: usize) -> Vec<Action> {
        let mut out = Vec::new();
        for subject in Object::all() {
            for direction in Direction::ALL {
                out.push(Action::new(ActionKind::Move { direction }, subject));
            }
            for color in Color::ALL {
                out.push(Action::new(ActionKind::Recolor { color }, subject));
            }
            out.push(Action::new(ActionKind::Remove, subject));
            for row in 0..height {
                for col in 0..width {
                    out.push(Action::new(ActionKind::Add { row, col }, subject));
                }
            }
        }
        out
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// All words the template grammar can emit, in a fixed order.
pub fn grammar_words() -> Vec<String> {
    let mut words: Vec<String> = ["move", "paint", "remove", "add", "the", "a", "at", "row", "column"]
        .iter()
        .map(|w| w.to_string())
        .collect();
    words.extend(Color::ALL.iter().map(|c| c.word().to_string()));
    words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
    words.extend(Direction::ALL.iter().map(|d| d.word().to_string()));
    words.extend((0..MAX_SIDE).map(|n| n.to_string()));
    words
}

/// Ground-truth transition. The input board is never modified.
pub fn apply_action(board: &Board, action: &Action) -> Result<Board> {
    let mut next = board.clone();
    let subject = action.subject;
    match action.kind {
        ActionKind::Move { direction } => {
            let (r, c) = board
                .find(subject)
                .ok_or_else(|| Error::MissingSubject(subject.to_string()))?;
            let (dr, dc) = direction.delta();
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= board.height as isize || nc >= board.width as isize {
                return Err(Error::OutOfBounds { row: nr, col: nc });
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if board.get(nr, nc) != Cell::Empty {
                return Err(Error::Occupied { row: nr, col: nc });
            }
            next.set(r, c, Cell::Empty);
            next.set(nr, nc, Cell::Object(subject));
        }
        ActionKind::Recolor { color } => {
            let (r, c) = board
                .find(subject)
                .ok_or_else(|| Error::MissingSubject(subject.to_string()))?;
            let recolored = Object::new(color, subject.shape);
            if board.find(recolored).is_some() {
                return Err(Error::DuplicateObject(recolored.to_string()));
            }
            next.set(r, c, Cell::Object(recolored));
        }
        ActionKind::Remove => {
            let (r, c) = board
                .find(subject)
                .ok_or_else(|| Error::MissingSubject(subject.to_string()))?;
            next.set(r, c, Cell::Empty);
        }
        ActionKind::Add { row, col } => {
            if row >= board.height || col >= board.width {
                return Err(Error::OutOfBounds {
                    row: row as isize,
                    col: col as isize,
                });
            }
            if board.get(row, col) != Cell::Empty {
                return Err(Error::Occupied { row, col });
            }
            if board.find(subject).is_some() {
                return Err(Error::DuplicateObject(subject.to_string()));
            }
            next.set(row, col, Cell::Object(subject));
        }
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Relative weights for move / recolor / remove / add.
    pub kind_weights: [f64; 4],
    /// Probability that an episode step is a no-op.
    pub noop_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            min_objects: 2,
            max_objects: 4,
            kind_weights: [1.0; 4],
            noop_fraction: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.height < 2 || self.width < 2 {
            return bad(format!("board must be at least 2x2, got {}x{}", self.height, self.width));
        }
        if self.height > MAX_SIDE || self.width > MAX_SIDE {
            return bad(format!("board sides are limited to {MAX_SIDE}"));
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad("object range must satisfy 1 <= min <= max".into());
        }
        if self.max_objects >= 12 || self.max_objects >= self.height * self.width {
            return bad("max_objects must leave room for an add action".into());
        }
        if self.kind_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.kind_weights[2] <= 0.0
        {
            return bad("kind weights must be finite and non-negative, with remove > 0".into());
        }
        if !(0.0..=1.0).contains(&self.noop_fraction) {
            return bad("noop_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

pub fn sample_board<R: Rng + ?Sized>(rng: &mut R, config: &WorldConfig) -> Board {
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<Object> = Object::all().collect();
    objects.shuffle(rng);
    let mut positions: Vec<usize> = (0..config.cells()).collect();
    positions.shuffle(rng);
    let mut board = Board::empty(config.height, config.width);
    for (object, &pos) in objects.iter().take(n).zip(&positions) {
        board.cells[pos] = Cell::Object(*object);
    }
    board
}

/// All feasible actions of one class on `board`, in canonical order.
pub fn feasible_actions(board: &Board, class: ActionClass) -> Vec<Action> {
    let present = board.objects();
    let mut out = Vec::new();
    match class {
        ActionClass::Move => {
            for &(subject, _, _) in &present {
                for direction in Direction::ALL {
                    let a = Action::new(ActionKind::Move { direction }, subject);
                    if apply_action(board, &a).is_ok() {
                        out.push(a);
                    }
                }
            }
        }
        ActionClass::Recolor => {
            for &(subject, _, _) in &present {
                for color in Color::ALL {
                    if board.find(Object::new(color, subject.shape)).is_none() {
                        out.push(Action::new(ActionKind::Recolor { color }, subject));
                    }
                }
            }
        }
        ActionClass::Remove => {
            out.extend(present.iter().map(|&(s, _, _)| Action::new(ActionKind::Remove, s)));
        }
        ActionClass::Add => {
            let empties: Vec<usize> = (0..board.len()).filter(|&i| board.cells[i] == Cell::Empty).collect();
            for subject in Object::all().filter(|o| board.find(*o).is_none()) {
                for &i in &empties {
                    out.push(Action::new(
                        ActionKind::Add {
                            row: i / board.width,
                            col: i % board.width,
                        },
                        subject,
                    ));
                }
            }
        }
        ActionClass::Unparseable => {}
    }
    out
}

/// Draws an action class by weight, then a uniform feasible action of that
/// class; classes with no feasible action are redrawn.
pub fn sample_action<R: Rng + ?Sized>(rng: &mut R, board: &Board, config: &WorldConfig) -> Action {
    let dist = WeightedIndex::new(config.kind_weights).expect("validated kind weights");
    loop {
        let class = ActionClass::ALL[dist.sample(rng)];
        let options = feasible_actions(board, class);
        if !options.is_empty() {
            return options[rng.random_range(0..options.len())];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Supervised,
    Synthetic,
}

/// Metadata carried by triplets whose action was annotated by a dynamics model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInfo {
    /// Annotation log-likelihood.
    pub score: f64,
    pub class: ActionClass,
    pub episode: u64,
    pub frames: (usize, usize),
}

/// `(source, action, target)` with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTriplet {
    pub source: Board,
    /// Parsed action; `None` when the text is outside the grammar.
    pub action: Option<Action>,
    pub text: String,
    pub target: Board,
    pub provenance: Provenance,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticInfo>,
}

impl TrajectoryTriplet {
    pub fn supervised(source: Board, action: Action, target: Board, seed: u64) -> Self {
        Self {
            source,
            text: action.text(),
            action: Some(action),
            target,
            provenance: Provenance::Supervised,
            seed,
            synthetic: None,
        }
    }

    pub fn synthetic(source: Board, text: String, target: Board, info: SyntheticInfo, seed: u64) -> Self {
        Self {
            source,
            action: Action::parse(&text).ok(),
            text,
            target,
            provenance: Provenance::Synthetic,
            seed,
            synthetic: Some(info),
        }
    }

    /// Same observations, different action text.
    pub fn with_text(&self, text: String) -> Self {
        Self {
            action: Action::parse(&text).ok(),
            text,
            ..self.clone()
        }
    }
}

pub fn sample_triplet(rng_seed: u64, config: &WorldConfig) -> TrajectoryTriplet {
    let mut rng = rng_from_seed(rng_seed);
    let source = sample_board(&mut rng, config);
    let action = sample_action(&mut rng, &source, config);
    let target = apply_action(&source, &action).expect("sampled actions are feasible");
    TrajectoryTriplet::supervised(source, action, target, rng_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub frames: Vec<Board>,
    /// Hidden ground truth between consecutive frames; `None` is a no-op step.
    pub actions: Vec<Option<Action>>,
    pub seed: u64,
}

impl Episode {
    /// Replays the hidden actions from the first frame.
    pub fn replay(&self) -> Result<Vec<Board>> {
        let mut frames = vec![self.frames[0].clone()];
        for action in &self.actions {
            let last = frames.last().unwrap();
            let next = match action {
                Some(a) => apply_action(last, a)?,
                None => last.clone(),
            };
            frames.push(next);
        }
        Ok(frames)
    }
}

pub fn rollout_episode(rng_seed: u64, length: usize, config: &WorldConfig) -> Result<Episode> {
    if length < 2 {
        return Err(Error::ConfigInvalid(format!("episode length must be >= 2, got {length}")));
    }
    let mut rng = rng_from_seed(rng_seed);
    let mut frames = vec![sample_board(&mut rng, config)];
    let mut actions = Vec::with_capacity(length - 1);
    for _ in 1..length {
        let current = frames.last().unwrap();
        let noop = rng.random::<f64>() < config.noop_fraction;
        let (action, next) = if noop {
            (None, current.clone())
        } else {
            let a = sample_action(&mut rng, current, config);
            let next = apply_action(current, &a)?;
            (Some(a), next)
        };
        actions.push(action);
        frames.push(next);
    }
    Ok(Episode {
        frames,
        actions,
        seed: rng_seed,
    })
}

/// Row-major interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RasterImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * Self::CHANNELS],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * Self::CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn render(board: &Board) -> RasterImage {
    let mut img = RasterImage::filled(board.height * CELL_PX, board.width * CELL_PX, 0);
    for (object, r, c) in board.objects() {
        let rgb = object.color.rgb();
        for y in 0..CELL_PX {
            for x in 0..CELL_PX {
                if object.shape.covers(y, x) {
                    img.set_pixel(r * CELL_PX + y, c * CELL_PX + x, rgb);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(color: Color, shape: Shape) -> Object {
        Object::new(color, shape)
    }

    fn board_with(items: &[(Object, usize, usize)]) -> Board {
        let mut b = Board::empty(8, 8);
        for &(o, r, c) in items {
            b.set(r, c, Cell::Object(o));
        }
        b
    }

    #[test]
    fn move_left_shifts_only_the_subject() {
        let red_sq = obj(Color::Red, Shape::Square);
        let blue_c = obj(Color::Blue, Shape::Circle);
        let b = board_with(&[(red_sq, 3, 4), (blue_c, 0, 0)]);
        let a = Action::new(ActionKind::Move { direction: Direction::Left }, red_sq);
        let next = apply_action(&b, &a).unwrap();
        assert_eq!(next.get(3, 3), Cell::Object(red_sq));
        assert_eq!(next.get(3, 4), Cell::Empty);
        assert_eq!(next.diff_count(&b), 2);
        assert_eq!(b.get(3, 4), Cell::Object(red_sq), "input must be untouched");
    }

    #[test]
    fn precondition_errors() {
        let green_t = obj(Color::Green, Shape::Triangle);
        let b = board_with(&[(green_t, 0, 0)]);
        let remove = Action::new(ActionKind::Remove, obj(Color::Blue, Shape::Circle));
        assert!(matches!(apply_action(&b, &remove), Err(Error::MissingSubject(_))));

        let add = Action::new(ActionKind::Add { row: 0, col: 0 }, obj(Color::Red, Shape::Circle));
        assert!(matches!(apply_action(&b, &add), Err(Error::Occupied { row: 0, col: 0 })));

        let off = Action::new(ActionKind::Move { direction: Direction::Up }, green_t);
        assert!(matches!(apply_action(&b, &off), Err(Error::OutOfBounds { .. })));

        let add_outside = Action::new(ActionKind::Add { row: 8, col: 0 }, obj(Color::Red, Shape::Circle));
        assert!(matches!(apply_action(&b, &add_outside), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn action_text_round_trips_over_the_whole_grammar() {
        for a in Action::enumerate(MAX_SIDE, MAX_SIDE) {
            assert_eq!(Action::parse(&a.text()).unwrap(), a, "{}", a.text());
        }
    }

    #[test]
    fn parse_rejects_near_misses() {
        for text in [
            "move the red square sideways",
            "move red square left",
            "add a red square at row 03 column 1",
            "add a red square at row 16 column 1",
            "remove the purple square",
            "",
        ] {
            assert!(Action::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn sample_triplet_is_sound_and_deterministic() {
        let cfg = WorldConfig::default();
        let t = sample_triplet(0, &cfg);
        assert_eq!(apply_action(&t.source, &t.action.unwrap()).unwrap(), t.target);
        assert_eq!(t, sample_triplet(0, &cfg));
    }

    #[test]
    fn thousand_seeds_cover_every_action_kind() {
        let cfg = WorldConfig::default();
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            let t = sample_triplet(seed, &cfg);
            counts[t.action.unwrap().class() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn episodes_replay_and_respect_noop_fraction() {
        let cfg = WorldConfig::default();
        let ep = rollout_episode(7, 32, &cfg).unwrap();
        assert_eq!(ep.frames.len(), 32);
        assert_eq!(ep.replay().unwrap(), ep.frames);
        assert_eq!(ep, rollout_episode(7, 32, &cfg).unwrap());

        let short = rollout_episode(1, 2, &cfg).unwrap();
        assert_eq!(short.actions.len(), 1);

        let still = WorldConfig {
            noop_fraction: 1.0,
            ..cfg.clone()
        };
        let ep = rollout_episode(3, 10, &still).unwrap();
        assert!(ep.frames.windows(2).all(|w| w[0] == w[1]));

        assert!(rollout_episode(3, 1, &cfg).is_err());
    }

    #[test]
    fn render_is_deterministic_and_cell_injective() {
        let b = sample_triplet(5, &WorldConfig::default()).source;
        assert_eq!(render(&b), render(&b));
        let mut codes = b.codes();
        let empty = codes.iter().position(|&c| c == 0).unwrap();
        let unused = (1..=12u8).find(|c| !codes.contains(c)).unwrap();
        codes[empty] = unused;
        let other = Board::from_codes(8, 8, &codes).unwrap();
        assert_ne!(render(&b), render(&other));
    }

    #[test]
    fn every_cell_state_renders_distinctly() {
        let mut seen = std::collections::HashSet::new();
        for code in 0..NUM_CELL_STATES as u8 {
            let b = Board::from_codes(2, 2, &[code, 0, 0, 0]).unwrap();
            assert!(seen.insert(render(&b).data));
        }
    }

    #[test]
    fn board_json_round_trip() {
        let t = sample_triplet(11, &WorldConfig::default());
        let line = serde_json::to_string(&t).unwrap();
        let back: TrajectoryTriplet = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig::default().validate().is_ok());
        let bad = WorldConfig {
            height: 1,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldConfig {
            min_objects: 0,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
