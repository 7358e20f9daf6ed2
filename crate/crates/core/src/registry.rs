//! Name-keyed factories for interchangeable strategies.

use crate::error::{Error, Result};

type Factory<T, A> = fn(&A) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, A> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T, A>)>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds or replaces the factory registered under `name`.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, A>) -> &mut Self {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = factory;
        } else {
            self.entries.push((name, factory));
        }
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.iter().find(|(n, _)| *n == name) {
            Some((_, f)) => f(args),
            None => Err(Error::Config(format!(
                "unknown {} '{name}' (available: {})",
                self.kind,
                self.names().join(", ")
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(u32);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn create_by_name() {
        let mut r: Registry<dyn Greeter, u32> = Registry::new("greeter");
        r.register("hello", |n| Ok(Box::new(Hello(*n))));
        assert_eq!(r.create("hello", &3).unwrap().greet(), "hello 3");
        let err = r.create("bye", &3).err().unwrap();
        assert!(err.is_config());
        assert!(err.to_string().contains("hello"));
    }
}
