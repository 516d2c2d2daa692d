fn main() {
    println!("memrc");
}
