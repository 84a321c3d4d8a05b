// Placeholder main; replaced by the full CLI once the library lands.
int main() { return 0; }
