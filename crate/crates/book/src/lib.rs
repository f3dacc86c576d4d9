//! Runs the code blocks in `book/src` as doctests.

#[cfg(doctest)]
mod chapters {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/jets.md")]
    pub struct Jets;
    #[doc = include_str!("../../../book/src/trajectory-field.md")]
    pub struct TrajectoryField;
    #[doc = include_str!("../../../book/src/physics.md")]
    pub struct Physics;
    #[doc = include_str!("../../../book/src/rendering.md")]
    pub struct Rendering;
    #[doc = include_str!("../../../book/src/scenes.md")]
    pub struct Scenes;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
