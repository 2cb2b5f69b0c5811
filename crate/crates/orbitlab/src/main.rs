fn main() {
    // placeholder until cli lands
}
