use std::fmt;

/// A problem with the user's input or configuration (exit code 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserError(pub String);

impl UserError {
    pub fn new(msg: impl Into<String>) -> Self {
        UserError(msg.into())
    }
}

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USER: i32 = 2;

fn is_user_core(e: &stratlab_core::Error) -> bool {
    use stratlab_core::Error as E;
    match e {
        E::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
        E::Parse { .. }
        | E::Data(_)
        | E::Coverage(_)
        | E::InsufficientData { .. }
        | E::Sizing(_)
        | E::Parameter(_)
        | E::Config(_)
        | E::Alignment(_) => true,
        E::Domain(_) | E::Shape(_) | E::Search(_) | E::Csv(_) | E::Json(_) => false,
    }
}

/// Maps an error chain to an exit code: 2 when any cause is a user, config or
/// input-data error, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return EXIT_USER;
        }
        if let Some(e) = cause.downcast_ref::<stratlab_core::Error>() {
            if is_user_core(e) {
                return EXIT_USER;
            }
        }
        if let Some(e) = cause.downcast_ref::<stratlab_informer::Error>() {
            match e {
                stratlab_informer::Error::Config(_) | stratlab_informer::Error::Data(_) => return EXIT_USER,
                stratlab_informer::Error::Core(c) if is_user_core(c) => return EXIT_USER,
                _ => {}
            }
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_USER;
            }
        }
    }
    EXIT_INTERNAL
}
